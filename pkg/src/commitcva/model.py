"""Shared conv-GRU-attention encoder with per-task softmax heads."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import BnState, Tensor
from .tokenizer import INPUT_SIDES, PAD_ID, EncodedCommit
from .types import TASK_LABELS, TASKS


class AllMaskedError(ValueError):
    """Attention pooling was asked to pool a fully masked sequence."""


def default_tasks() -> list[tuple[str, int]]:
    return [(t, len(TASK_LABELS[t])) for t in TASKS]


@dataclass
class ModelConfig:
    n: int = 1024  # input length
    embed: int = 300
    vocab_size: int = 10002  # incl. PAD/UNK
    filter_sizes: tuple[int, ...] = (1, 3, 5)
    filters: int = 128
    gru_hidden: int = 128
    attn_hidden: int = 128
    task_hidden: int = 128
    tasks: list[tuple[str, int]] = field(default_factory=default_tasks)
    dropout_rate: float = 0.2
    inputs: tuple[str, ...] = INPUT_SIDES
    use_attention: bool = True

    def __post_init__(self) -> None:
        self.filter_sizes = tuple(self.filter_sizes)
        self.inputs = tuple(self.inputs)
        self.tasks = [(str(t), int(c)) for t, c in self.tasks]
        if not self.filter_sizes:
            raise ValueError("filter_sizes must be non-empty")
        if any(k > self.n for k in self.filter_sizes):
            raise ValueError(f"filter sizes {self.filter_sizes} exceed input length {self.n}")
        if any(c < 2 for _, c in self.tasks):
            raise ValueError("every task needs at least 2 labels")

    @property
    def commit_dim(self) -> int:
        return len(self.inputs) * len(self.filter_sizes) * self.gru_hidden

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "embed": self.embed,
            "vocab_size": self.vocab_size,
            "filter_sizes": list(self.filter_sizes),
            "filters": self.filters,
            "gru_hidden": self.gru_hidden,
            "attn_hidden": self.attn_hidden,
            "task_hidden": self.task_hidden,
            "tasks": [[t, c] for t, c in self.tasks],
            "dropout_rate": self.dropout_rate,
            "inputs": list(self.inputs),
            "use_attention": self.use_attention,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["filter_sizes"] = tuple(d.get("filter_sizes", (1, 3, 5)))
        d["inputs"] = tuple(d.get("inputs", INPUT_SIDES))
        d["tasks"] = [(t, c) for t, c in d.get("tasks", [[n, c] for n, c in default_tasks()])]
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(
    config: ModelConfig, rng: np.random.Generator
) -> tuple[dict[str, Tensor], dict[str, BnState]]:
    """Fresh parameter set: uniform(-0.05, 0.05) embedding, Glorot matrices,
    zero biases. One GRU+attention set per conv branch, shared by all inputs."""
    p: dict[str, np.ndarray] = {}
    p["embedding"] = rng.uniform(-0.05, 0.05, size=(config.vocab_size, config.embed))
    L, F, H, A = config.embed, config.filters, config.gru_hidden, config.attn_hidden
    for K in config.filter_sizes:
        p[f"conv{K}.w"] = _glorot(rng, K * L, F, (K, L, F))
        p[f"conv{K}.bn.gamma"] = np.ones(F)
        p[f"conv{K}.bn.beta"] = np.zeros(F)
        for gate in ("z", "r", "h"):
            p[f"branch{K}.gru.W{gate}"] = _glorot(rng, F, H, (F, H))
            p[f"branch{K}.gru.U{gate}"] = _glorot(rng, H, H, (H, H))
            p[f"branch{K}.gru.b{gate}"] = np.zeros(H)
        p[f"branch{K}.attn.Wa"] = _glorot(rng, H, A, (H, A))
        p[f"branch{K}.attn.ba"] = np.zeros(A)
        p[f"branch{K}.attn.Ws"] = _glorot(rng, A, 1, (A, 1))
    D, T = config.commit_dim, config.task_hidden
    for task, n_labels in config.tasks:
        p[f"task.{task}.Wt"] = _glorot(rng, D, T, (D, T))
        p[f"task.{task}.bt"] = np.zeros(T)
        p[f"task.{task}.Wp"] = _glorot(rng, T, n_labels, (T, n_labels))
        p[f"task.{task}.bp"] = np.zeros(n_labels)
    params = {k: Tensor(v, requires_grad=True) for k, v in p.items()}
    bn = {f"conv{K}": BnState.for_features(F) for K in config.filter_sizes}
    return params, bn


def gru_step(x_t: Tensor, h_prev: Tensor, params: dict[str, Tensor], prefix: str = "") -> Tensor:
    """One gated-recurrent step: update/reset gates then the blended state."""
    W = lambda name: params[f"{prefix}{name}"]  # noqa: E731
    z = ag.sigmoid(x_t @ W("Wz") + h_prev @ W("Uz") + W("bz"))
    r = ag.sigmoid(x_t @ W("Wr") + h_prev @ W("Ur") + W("br"))
    h_hat = ag.tanh(x_t @ W("Wh") + (r * h_prev) @ W("Uh") + W("bh"))
    return ag.rsub(1.0, z) * h_prev + z * h_hat


def attention_pool(
    h: Tensor, mask: np.ndarray, params: dict[str, Tensor], prefix: str = ""
) -> Tensor:
    """Score each position, softmax over unmasked ones, return the weighted sum."""
    squeeze = h.data.ndim == 2
    if squeeze:
        h = ag.reshape(h, (1,) + h.data.shape)
    mask = np.asarray(mask, dtype=bool).reshape(h.data.shape[0], h.data.shape[1])
    if not mask.any(axis=1).all():
        raise AllMaskedError("attention over a fully masked sequence")
    B, m, _ = h.data.shape
    u = ag.tanh(h @ params[f"{prefix}Wa"] + params[f"{prefix}ba"])
    scores = ag.reshape(u @ params[f"{prefix}Ws"], (B, m))
    bias = np.where(mask, 0.0, -1e30)
    weights = ag.softmax(scores + Tensor(bias), axis=-1)
    pooled = ag.tsum(h * ag.reshape(weights, (B, m, 1)), axis=1)
    return ag.reshape(pooled, pooled.data.shape[1:]) if squeeze else pooled


def _conv_row_mask(token_mask: np.ndarray, k: int) -> np.ndarray:
    """A feature-map row is real when its K-token window overlaps a real token."""
    windows = np.lib.stride_tricks.sliding_window_view(token_mask, k, axis=1)
    return windows.any(axis=-1)


def _branch_output(
    emb: Tensor,
    token_mask: np.ndarray,
    k: int,
    params: dict[str, Tensor],
    bn: dict[str, BnState],
    config: ModelConfig,
    training: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    fmap = ag.conv1d(emb, params[f"conv{k}.w"])
    fmap = ag.relu(fmap)
    fmap = ag.batch_norm(
        fmap, params[f"conv{k}.bn.gamma"], params[f"conv{k}.bn.beta"], bn[f"conv{k}"], training
    )
    B, m, _ = fmap.data.shape
    h = Tensor(np.zeros((B, config.gru_hidden)))
    states = []
    for t in range(m):
        x_t = ag.tslice(fmap, (slice(None), t, slice(None)))
        h = gru_step(x_t, h, params, f"branch{k}.gru.")
        states.append(ag.reshape(h, (B, 1, config.gru_hidden)))
    h_stack = ag.concat(states, axis=1)
    row_mask = _conv_row_mask(token_mask, k).copy()
    empty = ~row_mask.any(axis=1)
    if empty.any():
        row_mask[empty] = True  # all-PAD side: fall back to uniform weights
    if config.use_attention:
        return attention_pool(h_stack, row_mask, params, f"branch{k}.attn.")
    last = row_mask.shape[1] - 1 - np.argmax(row_mask[:, ::-1], axis=1)
    return ag.tslice(h_stack, (np.arange(B), last))


def forward_commit(
    batch: dict[str, np.ndarray],
    params: dict[str, Tensor],
    bn: dict[str, BnState],
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encode a batch of commits into (B, commit_dim) feature vectors."""
    parts = []
    for side in config.inputs:
        ids = np.asarray(batch[side], dtype=np.int64)
        token_mask = ids != PAD_ID
        emb = ag.embedding_lookup(params["embedding"], ids)
        for k in config.filter_sizes:
            parts.append(
                _branch_output(emb, token_mask, k, params, bn, config, training, rng)
            )
    return ag.concat(parts, axis=-1)


def predict_heads(
    commit_vec: Tensor,
    params: dict[str, Tensor],
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> dict[str, Tensor]:
    """Per-task probability tensors from the shared commit vector."""
    x = ag.dropout(commit_vec, config.dropout_rate, rng, training)
    probs: dict[str, Tensor] = {}
    for task, _ in config.tasks:
        t1 = ag.relu(x @ params[f"task.{task}.Wt"] + params[f"task.{task}.bt"])
        t1 = ag.dropout(t1, config.dropout_rate, rng, training)
        probs[task] = ag.softmax(t1 @ params[f"task.{task}.Wp"] + params[f"task.{task}.bp"])
    return probs


def multi_task_loss(
    probs_by_task: dict[str, Tensor], labels_by_task: dict[str, np.ndarray]
) -> Tensor:
    """Sum over tasks of batch-mean cross entropy."""
    total: Tensor | None = None
    for task, probs in probs_by_task.items():
        term = ag.cross_entropy(probs, labels_by_task[task])
        total = term if total is None else total + term
    assert total is not None
    return total


def encode_commit(
    enc: EncodedCommit,
    params: dict[str, Tensor],
    bn: dict[str, BnState],
    config: ModelConfig,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Single-commit convenience wrapper; returns the feature vector."""
    batch = {side: np.asarray([enc.sides[side]], dtype=np.int64) for side in config.inputs}
    vec = forward_commit(batch, params, bn, config, training=(mode == "train"), rng=rng)
    return vec.data[0]


def predict(
    commit_vec: np.ndarray | Tensor, params: dict[str, Tensor], config: ModelConfig
) -> dict[str, tuple[int, np.ndarray]]:
    """Per task: (argmax label index, probability vector). Ties -> lowest index."""
    vec = commit_vec if isinstance(commit_vec, Tensor) else Tensor(np.atleast_2d(commit_vec))
    with ag.no_grad():
        probs = predict_heads(vec, params, config, training=False)
    out = {}
    for task, _ in config.tasks:
        p = probs[task].data
        p = p[0] if p.ndim == 2 and p.shape[0] == 1 else p
        out[task] = (int(np.argmax(p)), p)
    return out
