"""Actor-critic attention network with observation normalization.

Token sequence fed to a small pre-norm transformer encoder:

    [observation] [candidate_0 .. candidate_{M-1}] [history_0 .. history_{H-1}]

Candidates get no position embedding, which keeps the per-candidate logits
equivariant to catalog order; history tokens are position-embedded because
their order matters.  The policy head maps each candidate token to a single
logit; the value head reads the observation token.  Invalid or padded tokens
are additively masked with a large negative constant, which in float64
underflows to exactly zero probability after softmax.

The same module hosts the checkpoint format: a framed binary layout with a
canonical JSON header so byte-identical parameters produce byte-identical
files (no archive timestamps).
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, concat
from .errors import ConfigMismatch, InvalidConfig, NoActions, ShapeError

MASK_VALUE = -1e9

# Token type ids for the type-embedding table.
_TYPE_OBS, _TYPE_CAND, _TYPE_HIST = 0, 1, 2


class RunningMoments:
    """Streaming per-dimension mean and population variance (Welford)."""

    def __init__(self, dim: int, eps: float = 1e-8):
        self.dim = dim
        self.eps = eps
        self.count = 0
        self.mean = np.zeros(dim, dtype=np.float64)
        self.m2 = np.zeros(dim, dtype=np.float64)

    def update(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.dim:
            raise ShapeError(f"observation dim {x.shape[-1]} != tracked dim {self.dim}")
        for row in x:
            self.count += 1
            delta = row - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (row - self.mean)

    @property
    def std(self) -> np.ndarray:
        if self.count == 0:
            return np.full(self.dim, self.eps)
        return np.maximum(np.sqrt(self.m2 / self.count), self.eps)

    def normalize(self, x: np.ndarray, update: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        batch = x[None, :] if squeeze else x
        if batch.shape[-1] != self.dim:
            raise ShapeError(f"observation dim {batch.shape[-1]} != tracked dim {self.dim}")
        if update:
            self.update(batch)
        if self.count == 0:
            out = np.zeros_like(batch)
        else:
            out = (batch - self.mean) / self.std
        return out[0] if squeeze else out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "norm_mean": self.mean.copy(),
            "norm_m2": self.m2.copy(),
            "norm_count": np.array([self.count], dtype=np.float64),
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        mean = arrays["norm_mean"]
        if mean.shape != (self.dim,):
            raise ConfigMismatch(f"normalizer dim {mean.shape[0]} != configured {self.dim}")
        self.mean = mean.astype(np.float64).copy()
        self.m2 = arrays["norm_m2"].astype(np.float64).copy()
        self.count = int(arrays["norm_count"][0])


@dataclass(frozen=True)
class NetworkConfig:
    obs_dim: int = 32
    candidate_dim: int = 35
    latent: int = 48
    heads: int = 3
    layers: int = 3
    head_hidden: int = 48
    ff_hidden: int = 192
    max_history: int = 8

    def __post_init__(self):
        if self.latent % self.heads != 0:
            raise InvalidConfig(f"latent {self.latent} not divisible by {self.heads} heads")
        if min(self.obs_dim, self.candidate_dim, self.latent, self.layers, self.heads) < 1:
            raise InvalidConfig("network dimensions must be positive")


class PolicyNetwork:
    """Shared encoder with a per-candidate policy head and a value head."""

    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, Tensor] = {}
        L = config.latent

        def lin(name: str, fan_in: int, fan_out: int, zero: bool = False):
            if zero:
                w = np.zeros((fan_in, fan_out))
            else:
                # small uniform init keeps the initial policy near-uniform
                bound = 1.0 / math.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params[f"{name}.w"] = Tensor(w, requires_grad=True)
            self.params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)

        lin("in_obs", config.obs_dim, L)
        lin("in_cand", config.candidate_dim, L)
        lin("in_hist", config.candidate_dim, L)
        self.params["type_emb"] = Tensor(rng.uniform(-0.1, 0.1, size=(3, L)), requires_grad=True)
        self.params["pos_emb"] = Tensor(
            rng.uniform(-0.1, 0.1, size=(config.max_history, L)), requires_grad=True
        )
        for i in range(config.layers):
            p = f"layer{i}"
            self.params[f"{p}.ln1.g"] = Tensor(np.ones(L), requires_grad=True)
            self.params[f"{p}.ln1.b"] = Tensor(np.zeros(L), requires_grad=True)
            lin(f"{p}.q", L, L)
            lin(f"{p}.k", L, L)
            lin(f"{p}.v", L, L)
            lin(f"{p}.o", L, L)
            self.params[f"{p}.ln2.g"] = Tensor(np.ones(L), requires_grad=True)
            self.params[f"{p}.ln2.b"] = Tensor(np.zeros(L), requires_grad=True)
            lin(f"{p}.ff1", L, config.ff_hidden)
            lin(f"{p}.ff2", config.ff_hidden, L)
        self.params["ln_f.g"] = Tensor(np.ones(L), requires_grad=True)
        self.params["ln_f.b"] = Tensor(np.zeros(L), requires_grad=True)
        lin("pol1", L, config.head_hidden)
        lin("pol2", config.head_hidden, 1, zero=True)
        lin("val1", L, config.head_hidden)
        lin("val2", config.head_hidden, 1, zero=True)

    # -- parameter plumbing ----------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def parameter_names(self) -> list[str]:
        return sorted(self.params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ConfigMismatch(f"parameter sets differ (missing={sorted(missing)[:3]}, extra={sorted(extra)[:3]})")
        for name, t in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ConfigMismatch(f"{name}: checkpoint shape {arr.shape} != model shape {t.data.shape}")
            t.data = arr.copy()

    # -- forward ---------------------------------------------------------------
    def _linear(self, name: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{name}.w"] + self.params[f"{name}.b"]

    def _layer_norm(self, prefix: str, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + 1e-5).sqrt() * self.params[f"{prefix}.g"] + self.params[f"{prefix}.b"]

    def _attention(self, prefix: str, x: Tensor, key_mask: np.ndarray) -> Tensor:
        cfg = self.config
        B, S, L = x.shape
        H, Dh = cfg.heads, L // cfg.heads

        def split_heads(t: Tensor) -> Tensor:
            return t.reshape(B, S, H, Dh).transpose(0, 2, 1, 3)

        q = split_heads(self._linear(f"{prefix}.q", x))
        k = split_heads(self._linear(f"{prefix}.k", x))
        v = split_heads(self._linear(f"{prefix}.v", x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(Dh))
        # masked keys get a large negative score; exp underflows to exact zero
        additive = (1.0 - key_mask)[:, None, None, :] * MASK_VALUE
        attn = (scores + additive).softmax(axis=-1)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, S, L)
        return self._linear(f"{prefix}.o", ctx)

    def forward(
        self,
        obs: np.ndarray,
        cand: np.ndarray,
        cand_mask: np.ndarray,
        hist: np.ndarray,
        hist_mask: np.ndarray,
    ) -> tuple[Tensor, Tensor]:
        """Batched forward pass.

        obs (B, obs_dim); cand (B, M, candidate_dim) with cand_mask (B, M)
        1.0 for real actions; hist (B, H, candidate_dim) with hist_mask
        (B, H).  Returns per-candidate logits (B, M) with invalid entries at
        ``MASK_VALUE``-scale, and values (B,).
        """
        cfg = self.config
        obs = np.asarray(obs, dtype=np.float64)
        cand = np.asarray(cand, dtype=np.float64)
        hist = np.asarray(hist, dtype=np.float64)
        cand_mask = np.asarray(cand_mask, dtype=np.float64)
        hist_mask = np.asarray(hist_mask, dtype=np.float64)
        B, M = cand.shape[0], cand.shape[1]
        H = hist.shape[1]
        if M == 0 or not cand_mask.any():
            raise NoActions("empty candidate set")
        if H > cfg.max_history:
            raise ShapeError(f"history length {H} exceeds capacity {cfg.max_history}")
        if obs.shape != (B, cfg.obs_dim):
            raise ShapeError(f"obs shape {obs.shape} != {(B, cfg.obs_dim)}")

        type_emb = self.params["type_emb"]
        t_obs = (self._linear("in_obs", Tensor(obs)) + type_emb[_TYPE_OBS]).reshape(B, 1, cfg.latent)
        t_cand = self._linear("in_cand", Tensor(cand)) + type_emb[_TYPE_CAND]
        tokens = [t_obs, t_cand]
        if H > 0:
            t_hist = self._linear("in_hist", Tensor(hist)) + type_emb[_TYPE_HIST]
            t_hist = t_hist + self.params["pos_emb"][0:H]
            tokens.append(t_hist)
        x = concat(tokens, axis=1)

        ones = np.ones((B, 1), dtype=np.float64)
        key_mask = np.concatenate([ones, cand_mask] + ([hist_mask] if H > 0 else []), axis=1)
        for i in range(cfg.layers):
            p = f"layer{i}"
            x = x + self._attention(f"{p}", self._layer_norm(f"{p}.ln1", x), key_mask)
            h = self._linear(f"{p}.ff1", self._layer_norm(f"{p}.ln2", x)).gelu()
            x = x + self._linear(f"{p}.ff2", h)
        x = self._layer_norm("ln_f", x)

        cand_tokens = x[:, 1 : 1 + M, :]
        pol = self._linear("pol1", cand_tokens).gelu()
        logits = self._linear("pol2", pol).reshape(B, M)
        logits = logits + (1.0 - cand_mask) * MASK_VALUE

        obs_token = x[:, 0, :]
        val = self._linear("val1", obs_token).gelu()
        value = self._linear("val2", val).reshape(B)
        return logits, value

    def act(
        self,
        obs: np.ndarray,
        cand: np.ndarray,
        cand_mask: np.ndarray,
        hist: np.ndarray,
        hist_mask: np.ndarray,
        rng: np.random.Generator | None = None,
        greedy: bool = False,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sample (or argmax) one action per row; no graph is recorded.

        Returns (action indices (B,), log-probs (B,), values (B,)).
        """
        with ad.no_grad():
            logits, value = self.forward(obs, cand, cand_mask, hist, hist_mask)
        log_probs = log_probs_np(logits.data)
        if greedy:
            idx = log_probs.argmax(axis=-1)
        else:
            if rng is None:
                raise InvalidConfig("sampling requires an rng")
            # Gumbel-max: exact softmax sampling with no cumulative-sum
            # edge cases; masked entries sit ~1e9 below and never win.
            u = 1.0 - rng.random(size=log_probs.shape)
            idx = (log_probs - np.log(-np.log(u))).argmax(axis=-1)
        rows = np.arange(log_probs.shape[0])
        return idx, log_probs[rows, idx], value.data


def log_probs_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# -- checkpoint format ----------------------------------------------------------
_MAGIC = b"PEDCKPT1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict):
    """Write tensors plus JSON metadata in a deterministic framed layout."""
    names = sorted(arrays)
    manifest = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        manifest.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "tensors": manifest}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise InvalidConfig(f"not a checkpoint file: {path}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise InvalidConfig(f"truncated checkpoint: {path}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return arrays, header["meta"]


def save_policy(path, net: PolicyNetwork, moments: RunningMoments, meta: dict):
    """Checkpoint parameters, normalizer state, and run metadata together."""
    arrays = net.state_dict()
    arrays.update(moments.state_arrays())
    meta = dict(meta)
    meta["network"] = {
        "obs_dim": net.config.obs_dim,
        "candidate_dim": net.config.candidate_dim,
        "latent": net.config.latent,
        "heads": net.config.heads,
        "layers": net.config.layers,
        "head_hidden": net.config.head_hidden,
        "ff_hidden": net.config.ff_hidden,
        "max_history": net.config.max_history,
    }
    save_checkpoint(path, arrays, meta)


def load_policy(path) -> tuple[PolicyNetwork, RunningMoments, dict]:
    """Rebuild a network and its normalizer from a checkpoint file."""
    arrays, meta = load_checkpoint(path)
    if "network" not in meta:
        raise ConfigMismatch(f"checkpoint {path} lacks network metadata")
    config = NetworkConfig(**meta["network"])
    net = PolicyNetwork(config, np.random.default_rng(0))
    moments = RunningMoments(config.obs_dim)
    norm_keys = ("norm_mean", "norm_m2", "norm_count")
    if any(k not in arrays for k in norm_keys):
        raise ConfigMismatch(f"checkpoint {path} lacks normalizer state")
    moments.load_state_arrays({k: arrays.pop(k) for k in norm_keys})
    net.load_state_dict(arrays)
    return net, moments, meta


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class Adam:
    """Adam over an ordered parameter list."""

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        b1, b2 = self.betas
        self.t += 1
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
