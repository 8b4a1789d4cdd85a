"""Command-line entry points: train, evaluate, baseline, inspect-prompt.

Configuration precedence: built-in defaults, then values from --config
(YAML), then explicit flags.  Every run directory receives delimited
metrics plus rendered PNG figures.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np
import yaml

from .actions import EditFamilies
from .baselines import BASELINE_KINDS, run_baseline
from .data import index_pool, load_jsonl, make_synthetic_dataset, sample_few_shot
from .env import EnvConfig, PromptEditEnv, collect_rollouts
from .errors import InvalidConfig, PromptEditError
from .evaluate import check_compatible, evaluate_split, write_inspection_file
from .features import CandidateFeaturizer
from .network import load_policy
from .ppo import PPOConfig
from .prompts import TaskSpec, builtin_seed_path, load_task_specs, render
from .remote import RemoteScorer
from .report import plot_margin_histogram, plot_method_comparison, plot_training_curves
from .scoring import ScoreWeights, SyntheticScorer
from .train import TrainConfig, train

logger = logging.getLogger(__name__)

DEFAULTS: dict = {
    "task": "synthetic",
    "task_file": None,
    "data": None,
    "eval_data": None,
    "seed": 0,
    "k_shots": 16,
    "n_exemplars": 4,
    "pool_size": 16,
    "horizon": 8,
    "scorer": "synthetic",
    "endpoint": None,
    "disable_instruction_edits": False,
    "disable_exemplar_edits": False,
    "disable_verbalizer_edits": False,
    "lambda_pos": 2.0,
    "lambda_neg": 1.8,
    "normalize_rewards": True,
    "iterations": 300,
    "episodes_per_iteration": 16,
    "eval_every": 20,
    "learning_rate": 5e-5,
    "entropy_coef": 0.005,
    "value_coef": 0.5,
    "minibatch_size": 32,
    "gamma": 0.99,
    "gae_lambda": 0.95,
    "clip_epsilon": 0.2,
    "epochs_per_update": 4,
    "max_grad_norm": 0.5,
    "out_dir": "runs/latest",
    "checkpoint": None,
    "kind": "all",
    "sample": False,
    "query": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptedit",
        description="Learn a query-dependent prompt-editing policy for few-shot classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file; flags override its values")
    common.add_argument("--task", help="task name from the built-in seed file")
    common.add_argument("--task-file", help="YAML file with task definitions (overrides built-ins)")
    common.add_argument("--data", help="JSONL dataset with text/label fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--k-shots", type=int, help="examples per class for train and dev splits")
    common.add_argument("--n-exemplars", type=int, help="exemplar slots in the prompt")
    common.add_argument("--pool-size", type=int, help="size of the exemplar pool")
    common.add_argument("--horizon", type=int, help="edit steps per episode")
    common.add_argument("--scorer", choices=("synthetic", "remote"))
    common.add_argument("--endpoint", help="remote scorer URL (required with --scorer remote)")
    common.add_argument(
        "--disable-instruction-edits", dest="disable_instruction_edits",
        action="store_const", const=True,
    )
    common.add_argument(
        "--disable-exemplar-edits", dest="disable_exemplar_edits",
        action="store_const", const=True,
    )
    common.add_argument(
        "--disable-verbalizer-edits", dest="disable_verbalizer_edits",
        action="store_const", const=True,
    )
    common.add_argument("--lambda-pos", type=float, help="weight on the correct label log-prob")
    common.add_argument("--lambda-neg", type=float, help="weight on the runner-up log-prob")
    common.add_argument("--out-dir")

    p_train = sub.add_parser("train", parents=[common], help="train an editing policy")
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--episodes-per-iteration", type=int)
    p_train.add_argument("--eval-every", type=int)
    p_train.add_argument("--learning-rate", type=float)
    p_train.add_argument("--entropy-coef", type=float)
    p_train.add_argument("--value-coef", type=float)
    p_train.add_argument("--minibatch-size", type=int)
    p_train.add_argument("--gamma", type=float)
    p_train.add_argument("--gae-lambda", type=float)
    p_train.add_argument("--clip-epsilon", type=float)
    p_train.add_argument("--epochs-per-update", type=int)
    p_train.add_argument("--max-grad-norm", type=float)
    p_train.add_argument(
        "--no-reward-normalization", dest="normalize_rewards",
        action="store_const", const=False,
    )

    p_eval = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", help="checkpoint file from a training run")
    p_eval.add_argument("--eval-data", help="JSONL file to evaluate on (default: the dev split)")
    p_eval.add_argument(
        "--sample", action="store_const", const=True,
        help="sample actions instead of greedy argmax",
    )

    p_base = sub.add_parser("baseline", parents=[common], help="run reference comparators")
    p_base.add_argument("--kind", choices=BASELINE_KINDS + ("all",))
    p_base.add_argument("--checkpoint", help="optionally include a trained policy in the comparison")
    p_base.add_argument("--eval-data", help="JSONL file to evaluate on (default: the dev split)")

    p_inspect = sub.add_parser(
        "inspect-prompt", parents=[common], help="show the edits a policy makes for one query"
    )
    p_inspect.add_argument("--checkpoint", help="checkpoint file from a training run")
    p_inspect.add_argument("--query", help="query text to build a prompt for")

    return parser


def merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise InvalidConfig(f"config file {config_path} must hold a mapping")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        cfg[key] = value
    return cfg


def resolve_task(cfg: dict) -> TaskSpec:
    path = cfg["task_file"] or builtin_seed_path()
    tasks = load_task_specs(path)
    name = cfg["task"]
    if name not in tasks:
        raise InvalidConfig(f"task {name!r} not found in {path}; available: {sorted(tasks)}")
    return tasks[name]


def resolve_dataset(cfg: dict, task: TaskSpec) -> list[tuple[str, str]]:
    if cfg["data"]:
        return load_jsonl(cfg["data"], task)
    if cfg["task"] == "synthetic":
        per_class = 2 * cfg["k_shots"] + math.ceil(cfg["pool_size"] / task.num_labels) + 2
        return make_synthetic_dataset(task, per_class=per_class, seed=cfg["seed"])
    raise InvalidConfig(f"task {cfg['task']!r} needs --data (only 'synthetic' self-generates)")


def build_scorer(cfg: dict, task: TaskSpec, pool):
    if cfg["scorer"] == "remote":
        if not cfg["endpoint"]:
            raise InvalidConfig("--scorer remote requires --endpoint")
        return RemoteScorer(task, pool, cfg["endpoint"])
    return SyntheticScorer(task, pool)


def build_env_config(cfg: dict) -> EnvConfig:
    return EnvConfig(
        horizon=cfg["horizon"],
        n_exemplars=cfg["n_exemplars"],
        pool_size=cfg["pool_size"],
        weights=ScoreWeights(lambda_pos=cfg["lambda_pos"], lambda_neg=cfg["lambda_neg"]),
        families=EditFamilies(
            instruction=not cfg["disable_instruction_edits"],
            exemplars=not cfg["disable_exemplar_edits"],
            verbalizers=not cfg["disable_verbalizer_edits"],
        ),
        normalize_rewards=cfg["normalize_rewards"],
    )


def build_ppo_config(cfg: dict) -> PPOConfig:
    return PPOConfig(
        learning_rate=cfg["learning_rate"],
        entropy_coef=cfg["entropy_coef"],
        value_coef=cfg["value_coef"],
        minibatch_size=cfg["minibatch_size"],
        gamma=cfg["gamma"],
        gae_lambda=cfg["gae_lambda"],
        clip_epsilon=cfg["clip_epsilon"],
        epochs_per_update=cfg["epochs_per_update"],
        max_grad_norm=cfg["max_grad_norm"],
    )


def _dump_config(cfg: dict, out_dir: str):
    with open(os.path.join(out_dir, "resolved_config.yaml"), "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def cmd_train(cfg: dict) -> int:
    task = resolve_task(cfg)
    dataset = resolve_dataset(cfg, task)
    train_split, dev_split, pool = sample_few_shot(
        dataset, cfg["k_shots"], cfg["seed"], task, cfg["pool_size"]
    )
    scorer = build_scorer(cfg, task, pool)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _dump_config(cfg, out_dir)

    result = train(
        task,
        pool,
        train_split,
        dev_split,
        scorer,
        build_env_config(cfg),
        build_ppo_config(cfg),
        TrainConfig(
            iterations=cfg["iterations"],
            episodes_per_iteration=cfg["episodes_per_iteration"],
            eval_every=cfg["eval_every"],
            seed=cfg["seed"],
        ),
        out_dir,
    )
    plot_training_curves(result.rows, os.path.join(out_dir, "training_curves.png"))
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    print(f"figures:    {os.path.join(out_dir, 'training_curves.png')}")
    print(
        f"best iteration {result.best_iteration}: "
        f"val accuracy {result.final_accuracy:.4f}, mean score {result.final_mean_score:.4f}"
    )
    return 0


def _load_eval_setup(cfg: dict):
    """Shared by evaluate/inspect: rebuild net, env, and featurizer from a checkpoint."""
    if not cfg["checkpoint"]:
        raise InvalidConfig("this command requires --checkpoint")
    net, moments, meta = load_policy(cfg["checkpoint"])
    task = resolve_task(cfg)
    pool = index_pool([(r["text"], r["label"]) for r in meta.get("pool", [])])
    env_config = build_env_config(cfg)
    check_compatible(meta, task, env_config)
    scorer = build_scorer(cfg, task, pool)
    env = PromptEditEnv(task, pool, scorer, env_config)
    return net, moments, meta, task, pool, env


def _eval_records(cfg: dict, task: TaskSpec) -> list[tuple[str, str]]:
    if cfg["eval_data"]:
        return load_jsonl(cfg["eval_data"], task)
    dataset = resolve_dataset(cfg, task)
    _, dev_split, _ = sample_few_shot(dataset, cfg["k_shots"], cfg["seed"], task, cfg["pool_size"])
    return list(dev_split)


def cmd_evaluate(cfg: dict) -> int:
    net, moments, meta, task, pool, env = _load_eval_setup(cfg)
    records = _eval_records(cfg, task)
    featurizer = CandidateFeaturizer(task, pool)
    result = evaluate_split(
        net, env, featurizer, moments, records, cfg["seed"], sample=cfg["sample"]
    )

    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _dump_config(cfg, out_dir)
    write_inspection_file(os.path.join(out_dir, "eval_records.jsonl"), result)
    with open(os.path.join(out_dir, "eval_metrics.jsonl"), "w") as fh:
        fh.write(
            json.dumps(
                {
                    "accuracy": result.accuracy,
                    "mean_final_score": result.mean_final_score,
                    "mean_initial_score": result.mean_initial_score,
                    "queries": len(result.predictions),
                },
                sort_keys=True,
            )
            + "\n"
        )
    plot_margin_histogram(
        [r["initial_score"] for r in result.records],
        [r["final_score"] for r in result.records],
        os.path.join(out_dir, "eval_margins.png"),
    )
    print(f"accuracy: {result.accuracy:.4f} over {len(result.predictions)} queries")
    print(f"mean margin: {result.mean_initial_score:.4f} -> {result.mean_final_score:.4f}")
    print(f"records:  {os.path.join(out_dir, 'eval_records.jsonl')}")
    print(f"figure:   {os.path.join(out_dir, 'eval_margins.png')}")
    return 0


def cmd_baseline(cfg: dict) -> int:
    task = resolve_task(cfg)
    dataset = resolve_dataset(cfg, task)
    _, dev_split, pool = sample_few_shot(
        dataset, cfg["k_shots"], cfg["seed"], task, cfg["pool_size"]
    )
    if cfg["eval_data"]:
        records = load_jsonl(cfg["eval_data"], task)
    else:
        records = list(dev_split)
    scorer = build_scorer(cfg, task, pool)
    env = PromptEditEnv(task, pool, scorer, build_env_config(cfg))

    kinds = BASELINE_KINDS if cfg["kind"] == "all" else (cfg["kind"],)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _dump_config(cfg, out_dir)

    scores: dict[str, float] = {}
    accuracies: dict[str, float] = {}
    with open(os.path.join(out_dir, "baseline_metrics.jsonl"), "w") as fh:
        for kind in kinds:
            res = run_baseline(kind, env, records, cfg["seed"])
            scores[kind] = res.mean_final_score
            accuracies[kind] = res.accuracy
            fh.write(
                json.dumps(
                    {
                        "kind": kind,
                        "accuracy": res.accuracy,
                        "mean_final_score": res.mean_final_score,
                        "mean_initial_score": res.mean_initial_score,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            print(f"{kind:12s} accuracy {res.accuracy:.4f}  mean score {res.mean_final_score:.4f}")
        if cfg["checkpoint"]:
            net, moments, meta = load_policy(cfg["checkpoint"])
            check_compatible(meta, task, build_env_config(cfg))
            featurizer = CandidateFeaturizer(task, pool)
            res = evaluate_split(net, env, featurizer, moments, records, cfg["seed"])
            scores["policy"] = res.mean_final_score
            accuracies["policy"] = res.accuracy
            fh.write(
                json.dumps(
                    {
                        "kind": "policy",
                        "accuracy": res.accuracy,
                        "mean_final_score": res.mean_final_score,
                        "mean_initial_score": res.mean_initial_score,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            print(f"{'policy':12s} accuracy {res.accuracy:.4f}  mean score {res.mean_final_score:.4f}")

    plot_method_comparison(scores, accuracies, os.path.join(out_dir, "baseline_comparison.png"))
    print(f"metrics: {os.path.join(out_dir, 'baseline_metrics.jsonl')}")
    print(f"figure:  {os.path.join(out_dir, 'baseline_comparison.png')}")
    return 0


def cmd_inspect(cfg: dict) -> int:
    if not cfg["query"]:
        raise InvalidConfig("inspect-prompt requires --query")
    net, moments, meta, task, pool, env = _load_eval_setup(cfg)
    featurizer = CandidateFeaturizer(task, pool)
    traces = collect_rollouts(
        env,
        net,
        featurizer,
        moments,
        [(cfg["query"], None)],
        np.random.SeedSequence(cfg["seed"]),
        greedy=True,
        update_norm=False,
    )
    tr = traces[0]
    predicted = task.label_space[int(np.argmax(tr.final_obs.label_log_probs))]
    before = render(tr.initial_state, task, pool)
    after = render(tr.final_state, task, pool)

    print("=== initial prompt ===")
    print(before)
    print("=== edits ===")
    for step in tr.steps:
        print(f"  {step.action.describe()}")
    print("=== final prompt ===")
    print(after)
    print(f"=== predicted label: {predicted} ===")

    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "inspection.json"), "w") as fh:
        json.dump(
            {
                "query": cfg["query"],
                "initial_prompt": before,
                "final_prompt": after,
                "actions": [s.action.describe() for s in tr.steps],
                "predicted_label": predicted,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "baseline": cmd_baseline,
        "inspect-prompt": cmd_inspect,
    }
    try:
        return handlers[args.command](merge_config(args))
    except PromptEditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
