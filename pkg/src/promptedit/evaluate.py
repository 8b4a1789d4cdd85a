"""Greedy evaluation of a trained policy plus prompt-inspection output.

The predictor is deliberately label-blind: it maps a final observation to
the argmax label.  Gold labels enter only afterwards, to compute accuracy
and margins.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DatasetSplit
from .env import PromptEditEnv, collect_rollouts
from .errors import ConfigMismatch, EmptySplit
from .features import CandidateFeaturizer
from .prompts import TaskSpec, render
from .scoring import ScorerObservation, compute_s


def predict_label(obs: ScorerObservation) -> int:
    """Label prediction from an observation alone; never sees gold labels."""
    return int(np.argmax(obs.label_log_probs))


@dataclass
class EvalResult:
    accuracy: float
    mean_final_score: float
    mean_initial_score: float
    predictions: list[int]
    records: list[dict]


def check_compatible(meta: dict, task: TaskSpec, env_config) -> None:
    """Reject checkpoints produced under a different task/env shape."""
    expected = {
        "task": task.task_name,
        "n_exemplars": env_config.n_exemplars,
        "pool_size": env_config.pool_size,
        "num_verbalizers": len(task.verbalizer_pool),
        "horizon": env_config.horizon,
    }
    mismatches = {
        key: (meta.get(key), want) for key, want in expected.items() if meta.get(key) != want
    }
    if mismatches:
        raise ConfigMismatch(f"checkpoint incompatible with run config: {mismatches}")


def evaluate_split(
    net,
    env: PromptEditEnv,
    featurizer: CandidateFeaturizer,
    moments,
    split: DatasetSplit | Sequence[tuple[str, str]],
    seed: int | np.random.SeedSequence,
    sample: bool = False,
) -> EvalResult:
    """Run the policy over a split and report accuracy and margins.

    Rollouts run label-free (no rewards); gold labels are compared against
    predictions only after every prediction is made.
    """
    records = list(split.records if isinstance(split, DatasetSplit) else split)
    if not records:
        raise EmptySplit("evaluation split has no examples")
    task = env.task
    seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)

    batch = [(text, None) for text, _ in records]
    traces = collect_rollouts(
        env, net, featurizer, moments, batch, seed_seq, greedy=not sample, update_norm=False
    )
    predictions = [predict_label(tr.final_obs) for tr in traces]

    # labels enter only now
    gold = [task.label_index(label) for _, label in records]
    correct_flags = [int(p == g) for p, g in zip(predictions, gold)]
    final_scores = [
        compute_s(tr.final_obs, g, env.config.weights) for tr, g in zip(traces, gold)
    ]
    initial_scores = [
        compute_s(tr.initial_obs, g, env.config.weights) for tr, g in zip(traces, gold)
    ]

    out_records = []
    for tr, pred, g, s_final, s_init in zip(traces, predictions, gold, final_scores, initial_scores):
        out_records.append(
            {
                "query": tr.query,
                "gold_label": task.label_space[g],
                "predicted_label": task.label_space[pred],
                "correct": int(pred == g),
                "initial_score": s_init,
                "final_score": s_final,
                "actions": [s.action.describe() for s in tr.steps],
                "initial_prompt": render(tr.initial_state, task, env.pool),
                "final_prompt": render(tr.final_state, task, env.pool),
            }
        )
    return EvalResult(
        accuracy=float(np.mean(correct_flags)),
        mean_final_score=float(np.mean(final_scores)),
        mean_initial_score=float(np.mean(initial_scores)),
        predictions=predictions,
        records=out_records,
    )


def write_inspection_file(path, result: EvalResult):
    """One JSON record per query: before/after prompts and the edit list."""
    with open(path, "w") as fh:
        for record in result.records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
