"""Clipped-surrogate policy optimization over collected rollouts.

The buffer is strictly on-policy: filled from one batch of rollouts,
consumed for a few epochs of minibatch updates, then discarded.  Advantage
estimates use generalized advantage estimation with a zero bootstrap value
at episode ends.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .env import EpisodeTrace
from .errors import InvalidConfig, NonFiniteLoss, ShapeError
from .features import CANDIDATE_DIM
from .network import Adam, PolicyNetwork, clip_grad_norm


@dataclass(frozen=True)
class PPOConfig:
    learning_rate: float = 5e-5
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    minibatch_size: int = 32
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_update: int = 4
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0 < self.clip_epsilon < 1:
            raise InvalidConfig(f"clip_epsilon must be in (0,1), got {self.clip_epsilon}")
        if not 0 < self.gamma <= 1 or not 0 < self.gae_lambda <= 1:
            raise InvalidConfig("gamma and gae_lambda must be in (0,1]")
        if self.minibatch_size < 1 or self.epochs_per_update < 1:
            raise InvalidConfig("minibatch_size and epochs_per_update must be >= 1")


def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[float],
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward GAE recursion; ``values`` carries one bootstrap entry."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if values.shape[0] != rewards.shape[0] + 1:
        raise ShapeError(f"values needs {rewards.shape[0] + 1} entries, got {values.shape[0]}")
    if dones.shape[0] != rewards.shape[0]:
        raise ShapeError(f"dones length {dones.shape[0]} != rewards length {rewards.shape[0]}")
    T = rewards.shape[0]
    advantages = np.zeros(T, dtype=np.float64)
    running = 0.0
    for t in range(T - 1, -1, -1):
        carry = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * carry - values[t]
        running = delta + gamma * lam * carry * running
        advantages[t] = running
    return advantages, advantages + values[:-1]


@dataclass
class BufferEntry:
    obs: np.ndarray
    cand: np.ndarray       # (M, CANDIDATE_DIM)
    hist: np.ndarray       # (t, CANDIDATE_DIM)
    action_index: int
    old_log_prob: float
    value: float
    advantage: float = 0.0
    ret: float = 0.0


class RolloutBuffer:
    """Flattened per-step entries across one batch of episodes."""

    def __init__(self, gamma: float, gae_lambda: float):
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.entries: list[BufferEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def add_trace(self, trace: EpisodeTrace):
        if not trace.steps:
            return
        rewards = [s.reward for s in trace.steps]
        values = [s.value for s in trace.steps] + [0.0]
        dones = [1.0 if s.done else 0.0 for s in trace.steps]
        dones[-1] = 1.0  # trace end is terminal even if cut short
        adv, ret = compute_gae(rewards, values, dones, self.gamma, self.gae_lambda)
        for t, step in enumerate(trace.steps):
            self.entries.append(
                BufferEntry(
                    obs=step.obs,
                    cand=step.cand,
                    hist=trace.chosen_rows(t),
                    action_index=step.action_index,
                    old_log_prob=step.log_prob,
                    value=step.value,
                    advantage=float(adv[t]),
                    ret=float(ret[t]),
                )
            )

    def normalized_advantages(self) -> np.ndarray:
        adv = np.array([e.advantage for e in self.entries], dtype=np.float64)
        return (adv - adv.mean()) / max(float(adv.std()), 1e-8)

    def minibatch_indices(self, rng: np.random.Generator, size: int) -> Iterator[np.ndarray]:
        perm = rng.permutation(len(self.entries))
        for lo in range(0, len(perm), size):
            yield perm[lo : lo + size]

    def clear(self):
        self.entries = []


def _pad_batch(entries: list[BufferEntry]):
    B = len(entries)
    m_max = max(e.cand.shape[0] for e in entries)
    h_max = max(e.hist.shape[0] for e in entries)
    obs = np.stack([e.obs for e in entries])
    cand = np.zeros((B, m_max, CANDIDATE_DIM), dtype=np.float64)
    cand_mask = np.zeros((B, m_max), dtype=np.float64)
    hist = np.zeros((B, h_max, CANDIDATE_DIM), dtype=np.float64)
    hist_mask = np.zeros((B, h_max), dtype=np.float64)
    for row, e in enumerate(entries):
        cand[row, : e.cand.shape[0]] = e.cand
        cand_mask[row, : e.cand.shape[0]] = 1.0
        if e.hist.shape[0]:
            hist[row, : e.hist.shape[0]] = e.hist
            hist_mask[row, : e.hist.shape[0]] = 1.0
    return obs, cand, cand_mask, hist, hist_mask


def ppo_update(
    net: PolicyNetwork,
    buffer: RolloutBuffer,
    config: PPOConfig,
    optimizer: Adam,
    rng: np.random.Generator,
) -> dict[str, float]:
    """Run the clipped-surrogate update epochs over one rollout buffer."""
    if not buffer.entries:
        raise InvalidConfig("ppo_update on an empty buffer")
    norm_adv = buffer.normalized_advantages()

    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0, "approx_kl": 0.0}
    batches = 0
    for _ in range(config.epochs_per_update):
        for idx in buffer.minibatch_indices(rng, config.minibatch_size):
            entries = [buffer.entries[i] for i in idx]
            obs, cand, cand_mask, hist, hist_mask = _pad_batch(entries)
            actions = np.array([e.action_index for e in entries])
            old_lp = np.array([e.old_log_prob for e in entries])
            adv = norm_adv[idx]
            returns = np.array([e.ret for e in entries])
            B = len(entries)

            logits, value = net.forward(obs, cand, cand_mask, hist, hist_mask)
            log_probs = logits.log_softmax(axis=-1)
            chosen = log_probs[np.arange(B), actions]
            ratio = (chosen - old_lp).exp()
            surrogate = ad.minimum(
                ratio * adv, ratio.clip(1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon) * adv
            )
            policy_loss = -surrogate.mean()

            value_err = value - returns
            value_loss = (value_err * value_err).mean()

            # masked entries contribute exactly zero: p underflows to 0.0
            probs = log_probs.exp()
            entropy = -(probs * log_probs).sum(axis=-1).mean()

            loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(
                    "update aborted",
                    diagnostics={
                        "policy_loss": float(policy_loss.data),
                        "value_loss": float(value_loss.data),
                        "entropy": float(entropy.data),
                        "max_ratio": float(ratio.data.max()),
                    },
                )

            optimizer.zero_grad()
            loss.backward()
            clip_grad_norm(net.parameters(), config.max_grad_norm)
            optimizer.step()

            totals["policy_loss"] += float(policy_loss.data)
            totals["value_loss"] += float(value_loss.data)
            totals["entropy"] += float(entropy.data)
            totals["clip_fraction"] += float((np.abs(ratio.data - 1.0) > config.clip_epsilon).mean())
            totals["approx_kl"] += float((old_lp - chosen.data).mean())
            batches += 1

    return {k: v / batches for k, v in totals.items()}
