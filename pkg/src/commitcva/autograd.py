"""Dense float64 tensors with reverse-mode automatic differentiation.

Each op records a backward closure; `backward` replays the tape in reverse
topological order. numpy is the array kernel; the graph, gradients and the
optimizer live here.
"""

from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


class NonFiniteGrad(FloatingPointError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- elementwise and linear ops --------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)),
    )


def rsub(scalar: float, a: Tensor) -> Tensor:
    return _node(scalar - a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

    def backward(g):
        da = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        db = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return da, db

    return _node(np.matmul(a.data, b.data), (a, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data >= 0
    y = np.empty_like(x.data)
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _node(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return _node(y, (x,), backward)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def clip_min(x: Tensor, lo: float) -> Tensor:
    x = as_tensor(x)
    return _node(np.maximum(x.data, lo), (x,), lambda g: (g * (x.data > lo),))


# -- structural ops ----------------------------------------------------------


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _node(data, tuple(tensors), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),))


def tslice(x: Tensor, key) -> Tensor:
    x = as_tensor(x)
    data = x.data[key]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[key] += g
        return (dx,)

    return _node(data, (x,), backward)


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g_arr = np.asarray(g)
        if axis is not None and not keepdims:
            g_arr = np.expand_dims(g_arr, axis)
        return (np.broadcast_to(g_arr, x.data.shape).copy(),)

    return _node(data, (x,), backward)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis), 1.0 / n)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        return (dt,)

    return _node(data, (table,), backward)


def conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Valid 1-d convolution with stride 1.

    x: (B, N, L) or (N, L); w: (K, L, F). Output (B, N-K+1, F) / (N-K+1, F).
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.data.ndim != 3:
        raise ShapeMismatch(f"conv1d: expected (B,N,L) and (K,L,F), got {x.shape}, {w.shape}")
    B, N, L = xd.shape
    K, Lw, F = w.data.shape
    if Lw != L:
        raise ShapeMismatch(f"conv1d: input width {L} != filter width {Lw}")
    if K > N:
        raise ShapeMismatch(f"conv1d: filter size {K} exceeds sequence length {N}")
    windows = np.lib.stride_tricks.sliding_window_view(xd, K, axis=1)  # (B, M, L, K)
    data = np.einsum("bmlk,klf->bmf", windows, w.data)
    M = N - K + 1

    def backward(g):
        g3 = g[None] if squeeze else g
        dw = np.einsum("bmlk,bmf->klf", windows, g3)
        dxwin = np.einsum("bmf,klf->bmkl", g3, w.data)
        dx = np.zeros_like(xd)
        for k in range(K):
            dx[:, k : k + M, :] += dxwin[:, :, k, :]
        return (dx[0] if squeeze else dx, dw)

    return _node(data[0] if squeeze else data, (x, w), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity in inference mode."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an RNG")
    x = as_tensor(x)
    scale = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _node(x.data * scale, (x,), lambda g: (g * scale,))


@dataclass
class BnState:
    """Running statistics for one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def for_features(cls, n: int) -> "BnState":
        return cls(mean=np.zeros(n), var=np.ones(n))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BnState,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize over every axis but the last; scale/shift by gamma/beta."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.data.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.mean = momentum * state.mean + (1.0 - momentum) * mu
        state.var = momentum * state.var + (1.0 - momentum) * var
    else:
        mu, var = state.mean, state.var
    std = np.sqrt(var + eps)
    xhat = (x.data - mu) / std
    y = gamma.data * xhat + beta.data
    n = int(np.prod([x.data.shape[a] for a in axes])) if axes else 1

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data
        if training:
            dx = (
                dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).mean(axis=axes)
            ) / std
        else:
            dx = dxhat / std
        return dx, _unbroadcast(dgamma, gamma.data.shape), _unbroadcast(dbeta, beta.data.shape)

    return _node(y, (x, gamma, beta), backward)


def cross_entropy(probs: Tensor, labels: np.ndarray, clamp: float = 1e-12) -> Tensor:
    """Mean over the batch of -log p(true class); probabilities clamped at 1e-12."""
    probs = as_tensor(probs)
    p = probs.data if probs.data.ndim == 2 else probs.data[None]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    onehot = np.zeros_like(p)
    onehot[np.arange(p.shape[0]), labels] = 1.0
    if probs.data.ndim != 2:
        onehot = onehot[0]
    picked = mul(log(clip_min(probs, clamp)), onehot)
    return mul(tsum(picked), -1.0 / p.shape[0])


# -- engine ------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from a scalar loss."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        for parent, contrib in zip(node._parents, node._backward(node.grad)):
            if contrib is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += contrib


# -- optimizer ----------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a named parameter dict; updates in place."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGrad(f"non-finite gradient for {name}; step aborted")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# -- initializers and checkpoints ---------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


CHECKPOINT_FORMAT = 1


def save_checkpoint(
    path: str | Path,
    params: dict[str, Tensor],
    buffers: dict[str, np.ndarray],
    meta: dict,
) -> None:
    """Versioned container: named float64 payloads plus a JSON header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dict(meta)
    header["format"] = CHECKPOINT_FORMAT
    arrays = {f"p:{k}": v.data for k, v in params.items()}
    arrays.update({f"b:{k}": v for k, v in buffers.items()})
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor], dict[str, np.ndarray], dict]:
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format: {meta.get('format')}")
        params: dict[str, Tensor] = {}
        buffers: dict[str, np.ndarray] = {}
        for key in npz.files:
            if key.startswith("p:"):
                params[key[2:]] = Tensor(npz[key], requires_grad=True)
            elif key.startswith("b:"):
                buffers[key[2:]] = npz[key]
    return params, buffers, meta
