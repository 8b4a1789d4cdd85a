"""Minimal reverse-mode automatic differentiation over numpy float64.

Everything the policy network needs and nothing more: elementwise
arithmetic, matmul with broadcast batching, a few nonlinearities, fused
softmax / log-softmax / logsumexp, and shape plumbing.  Keeping the tape in
plain float64 numpy makes gradient checks against central differences tight
(~1e-9 relative) and keeps training byte-reproducible across runs.

Use ``no_grad()`` around rollouts to skip graph construction entirely.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NoTape, ShapeError

_GRAD_ENABLED = True

_GELU_C = math.sqrt(2.0 / math.pi)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        grad_flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{grad_flag})"

    # -- graph plumbing ------------------------------------------------------
    def _accumulate(self, grad: np.ndarray):
        grad = _unbroadcast(grad, self.data.shape)
        self.grad = grad if self.grad is None else self.grad + grad

    def backward(self, grad: np.ndarray | None = None):
        """Backpropagate from this node into every reachable leaf."""
        if not self.requires_grad:
            raise NoTape("tensor was not recorded; build it with grad enabled")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward on non-scalar needs an explicit seed gradient")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}")

        # Iterative topological order; graphs get deep at long horizons.
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other):
        other = _wrap(other)
        out = _node(self.data + other.data, (self, other))
        if out._parents:
            def backward():
                if self.requires_grad:
                    self._accumulate(out.grad)
                if other.requires_grad:
                    other._accumulate(out.grad)
            out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _wrap(other)
        out = _node(self.data * other.data, (self, other))
        if out._parents:
            def backward():
                if self.requires_grad:
                    self._accumulate(out.grad * other.data)
                if other.requires_grad:
                    other._accumulate(out.grad * self.data)
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __truediv__(self, other):
        other = _wrap(other)
        out = _node(self.data / other.data, (self, other))
        if out._parents:
            def backward():
                if self.requires_grad:
                    self._accumulate(out.grad / other.data)
                if other.requires_grad:
                    other._accumulate(-out.grad * self.data / (other.data ** 2))
            out._backward = backward
        return out

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __pow__(self, exponent: float):
        if not isinstance(exponent, (int, float)):
            raise ShapeError("only scalar exponents are supported")
        out = _node(self.data ** exponent, (self,))
        if out._parents:
            def backward():
                self._accumulate(out.grad * exponent * self.data ** (exponent - 1))
            out._backward = backward
        return out

    def __matmul__(self, other):
        other = _wrap(other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise ShapeError("matmul needs tensors with ndim >= 2")
        if self.data.shape[-1] != other.data.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {self.data.shape} @ {other.data.shape}")
        out = _node(self.data @ other.data, (self, other))
        if out._parents:
            def backward():
                if self.requires_grad:
                    self._accumulate(out.grad @ other.data.swapaxes(-1, -2))
                if other.requires_grad:
                    other._accumulate(self.data.swapaxes(-1, -2) @ out.grad)
            out._backward = backward
        return out

    # -- elementwise nonlinearities -------------------------------------------
    def exp(self):
        out = _node(np.exp(self.data), (self,))
        if out._parents:
            def backward():
                self._accumulate(out.grad * out.data)
            out._backward = backward
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out._parents:
            def backward():
                self._accumulate(out.grad / self.data)
            out._backward = backward
        return out

    def sqrt(self):
        out = _node(np.sqrt(self.data), (self,))
        if out._parents:
            def backward():
                self._accumulate(out.grad * 0.5 / out.data)
            out._backward = backward
        return out

    def tanh(self):
        out = _node(np.tanh(self.data), (self,))
        if out._parents:
            def backward():
                self._accumulate(out.grad * (1.0 - out.data ** 2))
            out._backward = backward
        return out

    def gelu(self):
        """Tanh-approximation GELU as one fused primitive."""
        x = self.data
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out = _node(0.5 * x * (1.0 + t), (self,))
        if out._parents:
            def backward():
                sech2 = 1.0 - t ** 2
                d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
                self._accumulate(out.grad * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner))
            out._backward = backward
        return out

    # -- reductions ------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            def backward():
                grad = out.grad
                if not keepdims and axis is not None:
                    grad = np.expand_dims(grad, axis)
                self._accumulate(np.broadcast_to(grad, self.data.shape).copy())
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    # -- shape plumbing ---------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out._parents:
            def backward():
                self._accumulate(out.grad.reshape(self.data.shape))
            out._backward = backward
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inverse = np.argsort(axes)
        out = _node(self.data.transpose(axes), (self,))
        if out._parents:
            def backward():
                self._accumulate(out.grad.transpose(inverse))
            out._backward = backward
        return out

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.data.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    def __getitem__(self, index):
        out = _node(self.data[index], (self,))
        if out._parents:
            def backward():
                grad = np.zeros_like(self.data)
                np.add.at(grad, index, out.grad)
                self._accumulate(grad)
            out._backward = backward
        return out

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes only through the interior."""
        out = _node(np.clip(self.data, lo, hi), (self,))
        if out._parents:
            inside = ((self.data > lo) & (self.data < hi)).astype(np.float64)
            def backward():
                self._accumulate(out.grad * inside)
            out._backward = backward
        return out

    # -- fused numerically careful ops -------------------------------------------
    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=axis, keepdims=True)
        out = _node(probs, (self,))
        if out._parents:
            def backward():
                g = out.grad
                dot = (g * probs).sum(axis=axis, keepdims=True)
                self._accumulate(probs * (g - dot))
            out._backward = backward
        return out

    def log_softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = _node(shifted - lse, (self,))
        if out._parents:
            probs = np.exp(out.data)
            def backward():
                g = out.grad
                self._accumulate(g - probs * g.sum(axis=axis, keepdims=True))
            out._backward = backward
        return out

    def logsumexp(self, axis: int = -1, keepdims: bool = False):
        # The max shift is constant w.r.t. gradients (shift invariance),
        # so it can stay detached.
        m = self.data.max(axis=axis, keepdims=True)
        value = m + np.log(np.exp(self.data - m).sum(axis=axis, keepdims=True))
        out = _node(value if keepdims else value.squeeze(axis), (self,))
        if out._parents:
            probs = np.exp(self.data - value)
            def backward():
                grad = out.grad
                if not keepdims:
                    grad = np.expand_dims(grad, axis)
                self._accumulate(probs * grad)
            out._backward = backward
        return out


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; the smaller branch carries the gradient (ties -> a)."""
    a = _wrap(a)
    b = _wrap(b)
    out = _node(np.minimum(a.data, b.data), (a, b))
    if out._parents:
        take_a = (a.data <= b.data).astype(np.float64)
        def backward():
            if a.requires_grad:
                a._accumulate(out.grad * take_a)
            if b.requires_grad:
                b._accumulate(out.grad * (1.0 - take_a))
        out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [(t if isinstance(t, Tensor) else Tensor(t)) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    t._accumulate(out.grad[tuple(sl)])
        out._backward = backward
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = t if isinstance(t, Tensor) else Tensor(t)
        shape = list(t.data.shape)
        shape.insert(axis if axis >= 0 else axis + t.data.ndim + 1, 1)
        expanded.append(t.reshape(*shape))
    return concat(expanded, axis=axis)


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """Leaf tensor tracked by optimizers.

    With ``rng`` given, ``data`` is interpreted as a shape and filled with
    normal noise times ``scale`` (default 1/sqrt(fan_in)).
    """
    if rng is not None:
        shape = tuple(data)
        if scale is None:
            fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
            scale = 1.0 / math.sqrt(fan_in)
        data = rng.standard_normal(shape) * scale
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, for checking."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2 * eps)
    return grad
