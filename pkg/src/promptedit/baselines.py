"""Reference comparators: no-edit, random-edit, and greedy-edit.

All three run label-free like the policy does; gold labels are applied
after prediction to compute accuracy and margins.  Greedy-edit is the only
one with a choice to make at test time: it cannot use the true-label score,
so it maximizes the scorer's top-1 margin instead (``use_label=True``
switches to the true-label score for training-time calibration runs).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .actions import apply
from .data import DatasetSplit
from .env import PromptEditEnv
from .errors import EmptySplit, InvalidConfig
from .evaluate import predict_label
from .scoring import ScorerObservation, compute_s

BASELINE_KINDS = ("no-edit", "random-edit", "greedy-edit")


def margin_proxy(obs: ScorerObservation) -> float:
    """Top-1 minus top-2 log-probability; needs no label."""
    top2 = np.sort(obs.label_log_probs)[-2:]
    return float(top2[1] - top2[0])


@dataclass
class BaselineResult:
    kind: str
    accuracy: float
    mean_final_score: float
    mean_initial_score: float
    final_scores: list[float]


def run_baseline(
    kind: str,
    env: PromptEditEnv,
    split: DatasetSplit | Sequence[tuple[str, str]],
    seed: int | np.random.SeedSequence,
    use_label: bool = False,
) -> BaselineResult:
    if kind not in BASELINE_KINDS:
        raise InvalidConfig(f"unknown baseline {kind!r}, expected one of {BASELINE_KINDS}")
    records = list(split.records if isinstance(split, DatasetSplit) else split)
    if not records:
        raise EmptySplit("baseline split has no examples")
    task = env.task
    seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = seed_seq.spawn(len(records))

    predictions: list[int] = []
    final_obs: list[ScorerObservation] = []
    initial_obs: list[ScorerObservation] = []
    for (text, label), child in zip(records, children):
        rng = np.random.default_rng(child)
        gold_for_greedy = task.label_index(label) if use_label else None
        ep = env.reset(text, None, rng=rng)
        initial_obs.append(ep.obs)
        if kind != "no-edit":
            for _ in range(env.config.horizon):
                catalog = env.catalog(ep)
                if len(catalog) == 0:
                    break
                if kind == "random-edit":
                    action = catalog[int(rng.integers(len(catalog)))]
                else:
                    scores = []
                    for cand in catalog:
                        nxt = apply(
                            ep.state,
                            cand,
                            pool_size=env.config.pool_size,
                            num_verbalizers=len(task.verbalizer_pool),
                        )
                        obs = env.scorer.score_state(nxt)
                        if gold_for_greedy is None:
                            scores.append(margin_proxy(obs))
                        else:
                            scores.append(compute_s(obs, gold_for_greedy, env.config.weights))
                    action = catalog[int(np.argmax(scores))]
                env.step(ep, action)
        final_obs.append(ep.obs)
        predictions.append(predict_label(ep.obs))

    gold = [task.label_index(label) for _, label in records]
    finals = [compute_s(o, g, env.config.weights) for o, g in zip(final_obs, gold)]
    initials = [compute_s(o, g, env.config.weights) for o, g in zip(initial_obs, gold)]
    accuracy = float(np.mean([int(p == g) for p, g in zip(predictions, gold)]))
    return BaselineResult(
        kind=kind,
        accuracy=accuracy,
        mean_final_score=float(np.mean(finals)),
        mean_initial_score=float(np.mean(initials)),
        final_scores=finals,
    )
