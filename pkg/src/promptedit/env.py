"""Prompt-editing MDP: reset/step semantics and batched rollout collection.

Rewards are successive score differences, so the undiscounted sum over an
episode telescopes to (final score - initial score) exactly.  Per-sample
reward normalization, when enabled, divides each episode's rewards by the
standard deviation of that episode's rewards floored at a small epsilon.

Rollouts advance a batch of episodes in lockstep so the policy runs one
batched forward per step; all randomness flows through seeded generators
spawned per batch, which keeps collection bit-reproducible.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .actions import ActionCatalog, EditAction, EditFamilies, apply, enumerate_actions
from .errors import EpisodeFinished, InvalidConfig, ScorerUnavailable
from .features import CANDIDATE_DIM, CandidateFeaturizer
from .prompts import Exemplar, PromptState, TaskSpec, tokenize_instruction
from .scoring import ScoreWeights, ScorerObservation, compute_s

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 8
    n_exemplars: int = 4
    pool_size: int = 16
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    families: EditFamilies = field(default_factory=EditFamilies)
    normalize_rewards: bool = True
    reward_norm_eps: float = 1e-4

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidConfig(f"horizon must be >= 1, got {self.horizon}")
        if self.n_exemplars > self.pool_size:
            raise InvalidConfig(
                f"n_exemplars {self.n_exemplars} exceeds pool size {self.pool_size}"
            )


@dataclass
class EpisodeState:
    state: PromptState
    obs: ScorerObservation
    score: float | None
    step: int
    query: str
    correct: int | None
    rng: np.random.Generator
    alive: bool = True


@dataclass
class StepRecord:
    obs: np.ndarray          # normalized observation fed to the policy
    cand: np.ndarray         # (M, CANDIDATE_DIM) catalog features
    action_index: int
    action: EditAction
    log_prob: float
    value: float
    reward: float            # what the trainer consumes (possibly normalized)
    raw_reward: float        # always the exact score difference
    done: bool


@dataclass
class EpisodeTrace:
    query: str
    correct: int | None
    initial_score: float | None
    final_score: float | None
    initial_state: PromptState
    final_state: PromptState
    initial_obs: ScorerObservation
    final_obs: ScorerObservation
    steps: list[StepRecord] = field(default_factory=list)

    def chosen_rows(self, upto: int) -> np.ndarray:
        """Feature rows of the actions taken before step ``upto``."""
        if upto == 0:
            return np.zeros((0, CANDIDATE_DIM), dtype=np.float64)
        return np.stack([s.cand[s.action_index] for s in self.steps[:upto]])


class PromptEditEnv:
    """Deterministic MDP over prompt states for one task."""

    def __init__(self, task: TaskSpec, pool: Sequence[Exemplar], scorer, config: EnvConfig):
        pool = tuple(pool)
        if len(pool) != config.pool_size:
            raise InvalidConfig(f"pool has {len(pool)} exemplars, config says {config.pool_size}")
        for i, ex in enumerate(pool):
            if ex.id != i:
                raise InvalidConfig("pool exemplar ids must be positional (0..N-1)")
        if config.n_exemplars > len(pool):
            raise InvalidConfig("pool smaller than the number of exemplar slots")
        self.task = task
        self.pool = pool
        self.scorer = scorer
        self.config = config

    def initial_state(self, query: str, rng: np.random.Generator) -> PromptState:
        slots = tuple(int(i) for i in rng.choice(self.config.pool_size, size=self.config.n_exemplars, replace=False))
        phrases = tuple(tokenize_instruction(self.task.instruction_pool[0]))
        return PromptState(
            instruction=phrases,
            exemplar_slots=slots,
            slot_verbalizers=(0,) * (self.config.n_exemplars + 1),
            query=query,
        )

    def reset(
        self,
        query: str,
        correct: int | None,
        init: PromptState | None = None,
        rng: np.random.Generator | int | None = None,
    ) -> EpisodeState:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        state = init if init is not None else self.initial_state(query, rng)
        obs = self.scorer.score_state(state)
        score = compute_s(obs, correct, self.config.weights) if correct is not None else None
        return EpisodeState(
            state=state, obs=obs, score=score, step=0, query=query, correct=correct, rng=rng
        )

    def catalog(self, ep: EpisodeState) -> ActionCatalog:
        return enumerate_actions(
            ep.state, self.config.pool_size, self.task, families=self.config.families
        )

    def step(self, ep: EpisodeState, action: EditAction) -> tuple[ScorerObservation, float, bool]:
        if ep.step >= self.config.horizon:
            raise EpisodeFinished(f"episode already ran its {self.config.horizon} steps")
        next_state = apply(
            ep.state,
            action,
            pool_size=self.config.pool_size,
            num_verbalizers=len(self.task.verbalizer_pool),
        )
        obs = self.scorer.score_state(next_state)
        if ep.correct is not None:
            new_score = compute_s(obs, ep.correct, self.config.weights)
            reward = new_score - ep.score
            ep.score = new_score
        else:
            reward = 0.0
        ep.state = next_state
        ep.obs = obs
        ep.step += 1
        return obs, reward, ep.step == self.config.horizon


def normalize_episode_rewards(rewards: Sequence[float], eps: float) -> list[float]:
    """Divide an episode's rewards by their std, floored at eps."""
    arr = np.asarray(rewards, dtype=np.float64)
    return list(arr / max(float(arr.std()), eps))


def collect_rollouts(
    env: PromptEditEnv,
    net,
    featurizer: CandidateFeaturizer,
    moments,
    batch: Sequence[tuple[str, int | None]],
    seed_seq: np.random.SeedSequence,
    greedy: bool = False,
    update_norm: bool = True,
) -> list[EpisodeTrace]:
    """Run a batch of episodes in lockstep and return their traces.

    Episodes whose scorer fails mid-flight are dropped from the result; the
    rest of the batch continues.
    """
    children = seed_seq.spawn(len(batch) + 1)
    action_rng = np.random.default_rng(children[-1])
    episodes: list[EpisodeState] = []
    traces: list[EpisodeTrace] = []
    for (query, label), child in zip(batch, children[:-1]):
        rng = np.random.default_rng(child)
        try:
            ep = env.reset(query, label, rng=rng)
        except ScorerUnavailable as exc:
            logger.warning("dropping episode at reset (%s): %s", query[:40], exc)
            episodes.append(None)  # keep indices aligned
            traces.append(None)
            continue
        episodes.append(ep)
        traces.append(
            EpisodeTrace(
                query=query,
                correct=label,
                initial_score=ep.score,
                final_score=ep.score,
                initial_state=ep.state,
                final_state=ep.state,
                initial_obs=ep.obs,
                final_obs=ep.obs,
            )
        )

    horizon = env.config.horizon
    for t in range(horizon):
        live = [i for i, ep in enumerate(episodes) if ep is not None and ep.alive and ep.step == t]
        if not live:
            break
        catalogs = {i: env.catalog(episodes[i]) for i in live}
        for i in list(live):
            if len(catalogs[i]) == 0:
                # edit space exhausted (e.g. instruction-only config with
                # every phrase deleted); end this episode early
                episodes[i].alive = False
                live.remove(i)
        if not live:
            break

        m_max = max(len(catalogs[i]) for i in live)
        B = len(live)
        cand = np.zeros((B, m_max, CANDIDATE_DIM), dtype=np.float64)
        cand_mask = np.zeros((B, m_max), dtype=np.float64)
        obs_raw = np.zeros((B, len(episodes[live[0]].obs.features)), dtype=np.float64)
        hist = np.zeros((B, t, CANDIDATE_DIM), dtype=np.float64)
        hist_mask = np.ones((B, t), dtype=np.float64)
        for row, i in enumerate(live):
            rows = featurizer.featurize_catalog(episodes[i].state, catalogs[i])
            cand[row, : len(rows)] = rows
            cand_mask[row, : len(rows)] = 1.0
            obs_raw[row] = episodes[i].obs.features
            if t > 0:
                hist[row] = traces[i].chosen_rows(t)

        obs_norm = moments.normalize(obs_raw, update=update_norm)
        idx, log_prob, value = net.act(
            obs_norm, cand, cand_mask, hist, hist_mask, rng=action_rng, greedy=greedy
        )

        for row, i in enumerate(live):
            ep = episodes[i]
            k = int(idx[row])
            action = catalogs[i][k]
            try:
                _, reward, done = env.step(ep, action)
            except ScorerUnavailable as exc:
                logger.warning("dropping episode mid-flight (%s): %s", ep.query[:40], exc)
                ep.alive = False
                traces[i] = None
                continue
            traces[i].steps.append(
                StepRecord(
                    obs=obs_norm[row].copy(),
                    cand=cand[row, : len(catalogs[i])].copy(),
                    action_index=k,
                    action=action,
                    log_prob=float(log_prob[row]),
                    value=float(value[row]),
                    reward=reward,
                    raw_reward=reward,
                    done=done,
                )
            )
            traces[i].final_score = ep.score
            traces[i].final_state = ep.state
            traces[i].final_obs = ep.obs

    out = [tr for tr in traces if tr is not None]
    if env.config.normalize_rewards:
        for tr in out:
            if not tr.steps or tr.correct is None:
                continue
            scaled = normalize_episode_rewards(
                [s.raw_reward for s in tr.steps], env.config.reward_norm_eps
            )
            for s, r in zip(tr.steps, scaled):
                s.reward = float(r)
    return out


def write_episode_traces(path, traces: Sequence[EpisodeTrace], pool: Sequence[Exemplar] | None = None):
    """Append episode traces as one JSON object per line."""
    with open(path, "a") as fh:
        for tr in traces:
            record = {
                "query": tr.query,
                "correct": tr.correct,
                "initial_score": tr.initial_score,
                "final_score": tr.final_score,
                "actions": [s.action.describe() for s in tr.steps],
                "rewards": [s.raw_reward for s in tr.steps],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
