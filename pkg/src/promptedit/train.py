"""Training loop: rollout, update, validate, keep the best checkpoint.

Metrics stream to a JSONL file with no wall-clock fields, so two runs with
the same seed produce byte-identical output.  The reported final metric is
recomputed from the saved checkpoint, never from live parameters.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSplit
from .env import EnvConfig, PromptEditEnv, collect_rollouts
from .errors import ScorerUnavailable
from .evaluate import evaluate_split
from .features import CANDIDATE_DIM, CandidateFeaturizer
from .network import Adam, NetworkConfig, PolicyNetwork, RunningMoments, load_policy, save_policy
from .ppo import PPOConfig, RolloutBuffer, ppo_update
from .prompts import Exemplar, TaskSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 300
    episodes_per_iteration: int = 16
    eval_every: int = 20
    seed: int = 0


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    rows: list[dict] = field(default_factory=list)
    best_iteration: int = -1
    final_accuracy: float = 0.0
    final_mean_score: float = 0.0


def _json_line(row: dict) -> str:
    import json

    return json.dumps(row, sort_keys=True) + "\n"


def train(
    task: TaskSpec,
    pool: tuple[Exemplar, ...],
    train_split: DatasetSplit,
    dev_split: DatasetSplit,
    scorer,
    env_config: EnvConfig,
    ppo_config: PPOConfig,
    train_config: TrainConfig,
    out_dir: str,
    net_config: NetworkConfig | None = None,
) -> TrainResult:
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
    metrics_path = os.path.join(out_dir, "metrics.jsonl")

    featurizer = CandidateFeaturizer(task, pool)
    if net_config is None:
        net_config = NetworkConfig(
            obs_dim=scorer.feature_dim,
            candidate_dim=CANDIDATE_DIM,
            max_history=env_config.horizon,
        )

    root = np.random.SeedSequence(train_config.seed)
    net_ss, sample_ss, ppo_ss, rollout_ss = root.spawn(4)
    net = PolicyNetwork(net_config, np.random.default_rng(net_ss))
    moments = RunningMoments(net_config.obs_dim)
    optimizer = Adam(net.parameters(), ppo_config.learning_rate)
    env = PromptEditEnv(task, pool, scorer, env_config)
    sample_rng = np.random.default_rng(sample_ss)
    ppo_rng = np.random.default_rng(ppo_ss)
    rollout_children = rollout_ss.spawn(max(train_config.iterations, 1))
    # fixed validation seed: every validation sees identical initial prompts,
    # so checkpoint comparisons are apples to apples
    eval_seed = (train_config.seed * 1_000_003 + 17) % (2**63)

    meta_base = {
        "task": task.task_name,
        "n_exemplars": env_config.n_exemplars,
        "pool_size": env_config.pool_size,
        "num_verbalizers": len(task.verbalizer_pool),
        "horizon": env_config.horizon,
        "seed": train_config.seed,
        # the pool travels with the checkpoint so evaluation rebuilds the
        # exact prompts the policy was trained against
        "pool": [{"text": ex.text, "label": ex.label} for ex in pool],
    }

    train_records = list(train_split)
    result = TrainResult(checkpoint_path=checkpoint_path, metrics_path=metrics_path)
    best_key: tuple[float, float] | None = None

    def validate(iteration: int) -> None:
        nonlocal best_key
        res = evaluate_split(net, env, featurizer, moments, dev_split, eval_seed)
        row = {
            "iteration": iteration,
            "val_accuracy": res.accuracy,
            "val_mean_final_score": res.mean_final_score,
        }
        result.rows.append(row)
        fh.write(_json_line(row))
        key = (res.accuracy, res.mean_final_score)
        if best_key is None or key > best_key:
            best_key = key
            result.best_iteration = iteration
            save_policy(
                checkpoint_path,
                net,
                moments,
                dict(meta_base, iteration=iteration, val_accuracy=res.accuracy),
            )

    with open(metrics_path, "w") as fh:
        for it in range(train_config.iterations):
            picks = sample_rng.integers(0, len(train_records), size=train_config.episodes_per_iteration)
            batch = [
                (train_records[i][0], task.label_index(train_records[i][1])) for i in picks
            ]
            traces = collect_rollouts(env, net, featurizer, moments, batch, rollout_children[it])
            if not traces:
                logger.error("every episode in iteration %d failed to score; aborting", it)
                save_policy(checkpoint_path, net, moments, dict(meta_base, iteration=it, partial=True))
                raise ScorerUnavailable(f"no scorable episodes at iteration {it}; partial checkpoint saved")

            buffer = RolloutBuffer(ppo_config.gamma, ppo_config.gae_lambda)
            for tr in traces:
                buffer.add_trace(tr)
            stats = ppo_update(net, buffer, ppo_config, optimizer, ppo_rng)
            buffer.clear()

            gains = [tr.final_score - tr.initial_score for tr in traces]
            row = {
                "iteration": it,
                "mean_score_gain": float(np.mean(gains)),
                "mean_final_score": float(np.mean([tr.final_score for tr in traces])),
                **{k: float(v) for k, v in stats.items()},
            }
            result.rows.append(row)
            fh.write(_json_line(row))

            if (it + 1) % train_config.eval_every == 0 or it == train_config.iterations - 1:
                validate(it)

        if best_key is None:
            # zero iterations, or eval never triggered: checkpoint as-is
            validate(train_config.iterations - 1 if train_config.iterations else -1)

        # reported numbers come from the checkpoint on disk
        net2, moments2, meta2 = load_policy(checkpoint_path)
        final = evaluate_split(net2, env, featurizer, moments2, dev_split, eval_seed)
        result.final_accuracy = final.accuracy
        result.final_mean_score = final.mean_final_score
        row = {
            "best_iteration": int(meta2.get("iteration", -1)),
            "final_val_accuracy": final.accuracy,
            "final_val_mean_score": final.mean_final_score,
            "from_checkpoint": True,
        }
        result.rows.append(row)
        fh.write(_json_line(row))

    return result
