"""Time-based splitting, metrics, the training loop and experiment protocol."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from . import cvss2
from .autograd import Adam, BnState, Tensor
from .model import (
    ModelConfig,
    forward_commit,
    init_params,
    multi_task_loss,
    predict_heads,
)
from .tokenizer import EncodedCommit, build_vocab, encode
from .types import TASK_LABELS, TASKS, CvssAssessment, SchemaViolation

log = logging.getLogger(__name__)


class TooFewCommits(ValueError):
    pass


class DivergedLoss(RuntimeError):
    pass


class LengthMismatch(ValueError):
    pass


# -- splitting ----------------------------------------------------------------


@dataclass
class SplitPlan:
    """Date-ordered folds and the rolling train/val/test round composition."""

    folds: list[list[int]]  # record indices per fold, oldest first

    @property
    def rounds(self) -> list[tuple[list[int], int, int]]:
        """(train fold ids 0..i-1, val fold id, test fold id) per round."""
        n = len(self.folds)
        return [(list(range(i + 1)), i + 1, i + 2) for i in range(n - 2)]

    def indices(self, fold_ids: list[int] | int) -> list[int]:
        if isinstance(fold_ids, int):
            fold_ids = [fold_ids]
        out: list[int] = []
        for f in fold_ids:
            out.extend(self.folds[f])
        return out


def time_split(records: list[dict], n_folds: int = 12) -> SplitPlan:
    """Sort by commit timestamp and cut into n_folds contiguous folds (±1 size)."""
    if len(records) < n_folds:
        raise TooFewCommits(f"{len(records)} commits cannot fill {n_folds} folds")
    order = sorted(
        range(len(records)),
        key=lambda i: (records[i].get("timestamp", 0), records[i].get("commit_hash", "")),
    )
    folds = [list(part) for part in np.array_split(np.asarray(order), n_folds)]
    return SplitPlan(folds=folds)


# -- metrics ------------------------------------------------------------------


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)):
        m[t, p] += 1
    return m


def mcc_multiclass(confusion: np.ndarray) -> float:
    """Gorodkin's R_K over a CxC count matrix; 0 when the denominator vanishes."""
    c = np.asarray(confusion, dtype=np.float64)
    n = c.sum()
    trace = np.trace(c)
    t = c.sum(axis=1)  # true-class totals
    p = c.sum(axis=0)  # predicted-class totals
    cov = n * trace - float(t @ p)
    denom_t = n * n - float(t @ t)
    denom_p = n * n - float(p @ p)
    if denom_t <= 0 or denom_p <= 0:
        return 0.0
    return cov / np.sqrt(denom_t * denom_p)


def macro_f1(confusion: np.ndarray) -> float:
    """Unweighted mean of per-class F1; classes absent on both axes are skipped."""
    c = np.asarray(confusion, dtype=np.float64)
    scores = []
    for k in range(c.shape[0]):
        tp = c[k, k]
        true_k = c[k, :].sum()
        pred_k = c[:, k].sum()
        if true_k == 0 and pred_k == 0:
            continue
        denom = true_k + pred_k
        scores.append(2.0 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def cohen_kappa(ratings_a: list, ratings_b: list) -> float:
    """Inter-rater agreement corrected for chance."""
    if len(ratings_a) != len(ratings_b):
        raise LengthMismatch(f"{len(ratings_a)} vs {len(ratings_b)} ratings")
    if not ratings_a:
        raise LengthMismatch("empty rating sequences")
    n = len(ratings_a)
    cats = sorted(set(ratings_a) | set(ratings_b), key=str)
    p_o = sum(1 for a, b in zip(ratings_a, ratings_b) if a == b) / n
    p_e = sum(
        (ratings_a.count(c) / n) * (ratings_b.count(c) / n) for c in cats
    )
    if p_e >= 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


# -- dataset plumbing -----------------------------------------------------------


def dataset_arrays(
    encs: list[EncodedCommit], config: ModelConfig
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Stack encoded commits into id matrices and per-task label index vectors."""
    sides = {
        side: np.asarray([e.sides[side] for e in encs], dtype=np.int64)
        for side in config.inputs
    }
    labels: dict[str, np.ndarray] = {}
    for task in TASKS:
        vals = []
        for e in encs:
            if e.labels is None:
                break
            vals.append(TASK_LABELS[task].index(getattr(e.labels, task)))
        if len(vals) == len(encs):
            labels[task] = np.asarray(vals, dtype=np.int64)
    return sides, labels


def predict_dataset(
    params: dict[str, Tensor],
    bn: dict[str, BnState],
    config: ModelConfig,
    sides: dict[str, np.ndarray],
    batch_size: int = 128,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Batched inference: per-task predicted indices and probability matrices."""
    num = next(iter(sides.values())).shape[0]
    preds = {task: np.zeros(num, dtype=np.int64) for task, _ in config.tasks}
    probs = {task: np.zeros((num, c)) for task, c in config.tasks}
    with ag.no_grad():
        for start in range(0, num, batch_size):
            stop = min(start + batch_size, num)
            batch = {s: a[start:stop] for s, a in sides.items()}
            vec = forward_commit(batch, params, bn, config, training=False)
            out = predict_heads(vec, params, config, training=False)
            for task, _ in config.tasks:
                p = out[task].data
                probs[task][start:stop] = p
                preds[task][start:stop] = np.argmax(p, axis=1)
    return preds, probs


# -- training -------------------------------------------------------------------


@dataclass
class TrainSettings:
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 50
    patience: int = 5
    min_delta: float = 1e-4


@dataclass
class RoundResult:
    params: dict[str, Tensor]
    bn: dict[str, BnState]
    config: ModelConfig
    per_task: dict[str, dict[str, float]]  # test metrics
    val_history: list[float]
    best_epoch: int
    epochs_run: int
    train_seconds: float
    eval_seconds: float


def _mean_mcc(
    params: dict[str, Tensor],
    bn: dict[str, BnState],
    config: ModelConfig,
    sides: dict[str, np.ndarray],
    labels: dict[str, np.ndarray],
) -> float:
    preds, _ = predict_dataset(params, bn, config, sides)
    scores = []
    for task, n_classes in config.tasks:
        cm = confusion_matrix(labels[task], preds[task], n_classes)
        scores.append(mcc_multiclass(cm))
    return float(np.mean(scores))


def _snapshot(params: dict[str, Tensor], bn: dict[str, BnState]):
    return (
        {k: p.data.copy() for k, p in params.items()},
        {k: BnState(s.mean.copy(), s.var.copy()) for k, s in bn.items()},
    )


def _restore(params: dict[str, Tensor], bn: dict[str, BnState], snap) -> None:
    datas, states = snap
    for k, p in params.items():
        p.data = datas[k].copy()
    for k, s in bn.items():
        s.mean = states[k].mean.copy()
        s.var = states[k].var.copy()


def train_round(
    train_encs: list[EncodedCommit],
    val_encs: list[EncodedCommit],
    test_encs: list[EncodedCommit],
    config: ModelConfig,
    settings: TrainSettings,
    seed: int,
    eval_tasks: list[tuple[str, int]] | None = None,
    derive_severity: bool = False,
) -> RoundResult:
    """Train one model with early stopping on validation mean MCC, restore the
    best checkpoint and score the test fold."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params, bn = init_params(config, rng)
    optimizer = Adam(params, lr=settings.lr)
    tr_sides, tr_labels = dataset_arrays(train_encs, config)
    va_sides, va_labels = dataset_arrays(val_encs, config)
    te_sides, te_labels = dataset_arrays(test_encs, config)
    num = len(train_encs)
    best = -np.inf
    best_epoch = 0
    stale = 0
    snap = _snapshot(params, bn)
    history: list[float] = []
    t_train = time.perf_counter()
    for epoch in range(1, settings.epochs + 1):
        perm = rng.permutation(num)
        for start in range(0, num, settings.batch_size):
            idx = perm[start : start + settings.batch_size]
            batch = {s: a[idx] for s, a in tr_sides.items()}
            vec = forward_commit(batch, params, bn, config, training=True, rng=rng)
            probs = predict_heads(vec, params, config, training=True, rng=rng)
            loss = multi_task_loss(
                probs, {task: tr_labels[task][idx] for task, _ in config.tasks}
            )
            if not np.isfinite(loss.data):
                raise DivergedLoss(f"non-finite loss at epoch {epoch} (seed {seed})")
            ag.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
        val_mcc = _mean_mcc(params, bn, config, va_sides, va_labels)
        history.append(val_mcc)
        if val_mcc > best + settings.min_delta:
            best = val_mcc
            best_epoch = epoch
            stale = 0
            snap = _snapshot(params, bn)
        else:
            stale += 1
            if stale >= settings.patience:
                break
    train_seconds = time.perf_counter() - t_train
    _restore(params, bn, snap)
    t_eval = time.perf_counter()
    preds, _ = predict_dataset(params, bn, config, te_sides)
    per_task: dict[str, dict[str, float]] = {}
    for task, n_classes in config.tasks:
        cm = confusion_matrix(te_labels[task], preds[task], n_classes)
        per_task[task] = {"mcc": mcc_multiclass(cm), "macro_f1": macro_f1(cm)}
    if derive_severity:
        sev = derive_severity_predictions(preds, config)
        cm = confusion_matrix(te_labels["severity"], sev, len(TASK_LABELS["severity"]))
        per_task["severity"] = {"mcc": mcc_multiclass(cm), "macro_f1": macro_f1(cm)}
    eval_seconds = time.perf_counter() - t_eval
    return RoundResult(
        params=params,
        bn=bn,
        config=config,
        per_task=per_task,
        val_history=history,
        best_epoch=best_epoch,
        epochs_run=len(history),
        train_seconds=train_seconds,
        eval_seconds=eval_seconds,
    )


def derive_severity_predictions(
    preds: dict[str, np.ndarray], config: ModelConfig
) -> np.ndarray:
    """Severity from the six predicted metrics through the CVSS v2 equations."""
    six = [t for t in TASKS if t != "severity"]
    num = preds[six[0]].shape[0]
    out = np.zeros(num, dtype=np.int64)
    sev_labels = TASK_LABELS["severity"]
    for i in range(num):
        values = {t: TASK_LABELS[t][int(preds[t][i])] for t in six}
        band = cvss2.severity_from_metrics(
            values["confidentiality"],
            values["integrity"],
            values["availability"],
            values["access_vector"],
            values["access_complexity"],
            values["authentication"],
        )
        out[i] = sev_labels.index(band)
    return out


# -- experiment protocol ---------------------------------------------------------


@dataclass
class AblationFlags:
    single_task: str | None = None  # a task name, or "all" for seven 1-head models
    no_attention: bool = False
    filter_sizes: tuple[int, ...] | None = None
    hunks_only: bool = False
    severity_from_formula: bool = False

    def to_dict(self) -> dict:
        return {
            "single_task": self.single_task,
            "no_attention": self.no_attention,
            "filter_sizes": list(self.filter_sizes) if self.filter_sizes else None,
            "hunks_only": self.hunks_only,
            "severity_from_formula": self.severity_from_formula,
        }


def apply_ablations(config: ModelConfig, flags: AblationFlags) -> ModelConfig:
    cfg = config
    if flags.no_attention:
        cfg = replace(cfg, use_attention=False)
    if flags.filter_sizes:
        cfg = replace(cfg, filter_sizes=tuple(flags.filter_sizes))
    if flags.hunks_only:
        cfg = replace(cfg, inputs=("pre_hunks", "post_hunks"))
    if flags.severity_from_formula:
        cfg = replace(cfg, tasks=[(t, c) for t, c in cfg.tasks if t != "severity"])
    return cfg


@dataclass
class MetricsReport:
    """Deterministic report body plus wall-clock timings kept to the side."""

    body: dict
    timings: dict = field(default_factory=dict)


def _derive_seed(seed: int, round_idx: int, repeat: int, lane: int = 0) -> int:
    ss = np.random.SeedSequence([seed, round_idx, repeat, lane])
    return int(ss.generate_state(1)[0])


def _round_rows(results_per_task: dict[str, dict[str, float]]) -> dict:
    tasks = sorted(results_per_task)
    return {
        "per_task": {t: dict(results_per_task[t]) for t in tasks},
        "mean_mcc": float(np.mean([results_per_task[t]["mcc"] for t in tasks])),
        "mean_macro_f1": float(np.mean([results_per_task[t]["macro_f1"] for t in tasks])),
    }


def run_experiment(
    records: list[dict],
    config: ModelConfig,
    settings: TrainSettings,
    n_folds: int = 12,
    repeats: int = 10,
    seed: int = 0,
    ablation: AblationFlags | None = None,
    vocab_max: int = 10000,
    max_rounds: int | None = None,
) -> MetricsReport:
    """The full rolling-window protocol: per round, rebuild the vocabulary from
    that round's training folds, encode, train `repeats` seeded runs and score."""
    flags = ablation or AblationFlags()
    base_cfg = apply_ablations(config, flags)
    plan = time_split(records, n_folds)
    rounds = plan.rounds if max_rounds is None else plan.rounds[:max_rounds]
    round_reports = []
    round_timings = []
    for round_idx, (train_f, val_f, test_f) in enumerate(rounds, start=1):
        subsets = {}
        for name, fold_ids in (("train", train_f), ("val", val_f), ("test", test_f)):
            subsets[name] = [records[i] for i in plan.indices(fold_ids)]
        vocab = build_vocab(
            (rec[side] for rec in subsets["train"] for side in base_cfg.inputs),
            max_size=vocab_max,
        )
        cfg_round = replace(base_cfg, vocab_size=vocab.size)
        encs = {
            name: [_encode_record(rec, vocab, cfg_round.n) for rec in recs]
            for name, recs in subsets.items()
        }
        runs = []
        timing = {"round": round_idx, "train_s": 0.0, "eval_s": 0.0}
        for rep in range(repeats):
            per_task, info = _run_once(encs, cfg_round, settings, flags, seed, round_idx, rep)
            timing["train_s"] += info["train_s"]
            timing["eval_s"] += info["eval_s"]
            runs.append(
                {
                    "repeat": rep,
                    **_round_rows(per_task),
                    "epochs": info["epochs"],
                }
            )
        tasks = sorted(runs[0]["per_task"])
        mean_rows = {
            "per_task": {
                t: {
                    m: float(np.mean([r["per_task"][t][m] for r in runs]))
                    for m in ("mcc", "macro_f1")
                }
                for t in tasks
            },
            "mean_mcc": float(np.mean([r["mean_mcc"] for r in runs])),
            "mean_macro_f1": float(np.mean([r["mean_macro_f1"] for r in runs])),
        }
        best_run = max(runs, key=lambda r: r["mean_mcc"])
        round_reports.append(
            {
                "round": round_idx,
                "runs": runs,
                "mean": mean_rows,
                "best": {
                    "repeat": best_run["repeat"],
                    "mean_mcc": best_run["mean_mcc"],
                    "mean_macro_f1": best_run["mean_macro_f1"],
                    "per_task": best_run["per_task"],
                },
            }
        )
        round_timings.append(timing)
        log.info(
            "round %d: mean MCC %.4f over %d run(s)",
            round_idx,
            mean_rows["mean_mcc"],
            repeats,
        )
    tasks = sorted(round_reports[0]["mean"]["per_task"])
    aggregate = {
        "mean_mcc": float(np.mean([r["mean"]["mean_mcc"] for r in round_reports])),
        "mean_macro_f1": float(
            np.mean([r["mean"]["mean_macro_f1"] for r in round_reports])
        ),
        "best_mcc": float(np.mean([r["best"]["mean_mcc"] for r in round_reports])),
        "best_macro_f1": float(
            np.mean([r["best"]["mean_macro_f1"] for r in round_reports])
        ),
        "per_task": {
            t: {
                m: float(np.mean([r["mean"]["per_task"][t][m] for r in round_reports]))
                for m in ("mcc", "macro_f1")
            }
            for t in tasks
        },
    }
    body = {
        "protocol": {
            "n_folds": n_folds,
            "n_rounds": len(rounds),
            "repeats": repeats,
            "seed": seed,
            "vocab_max": vocab_max,
            "config": config.to_dict(),
            "ablation": flags.to_dict(),
            "train": {
                "lr": settings.lr,
                "batch_size": settings.batch_size,
                "epochs": settings.epochs,
                "patience": settings.patience,
                "min_delta": settings.min_delta,
            },
        },
        "rounds": round_reports,
        "aggregate": aggregate,
    }
    timings = {
        "rounds": round_timings,
        "train_s": float(sum(t["train_s"] for t in round_timings)),
        "eval_s": float(sum(t["eval_s"] for t in round_timings)),
    }
    return MetricsReport(body=body, timings=timings)


def _encode_record(rec: dict, vocab, n: int) -> EncodedCommit:
    for side in ("pre_hunks", "post_hunks", "pre_ctx", "post_ctx"):
        if side not in rec:
            raise SchemaViolation(f"context record missing field: {side}")
    labels = CvssAssessment.from_dict(rec["labels"]) if "labels" in rec else None
    return encode(
        {s: rec[s] for s in ("pre_hunks", "post_hunks", "pre_ctx", "post_ctx")},
        vocab,
        n=n,
        commit_id=rec.get("commit_hash", ""),
        labels=labels,
        timestamp=int(rec.get("timestamp", 0)),
    )


def _run_once(
    encs: dict[str, list[EncodedCommit]],
    cfg: ModelConfig,
    settings: TrainSettings,
    flags: AblationFlags,
    seed: int,
    round_idx: int,
    rep: int,
) -> tuple[dict[str, dict[str, float]], dict]:
    """One seeded run: either the shared multi-task model or 1-head models."""
    if flags.single_task is None:
        run_seed = _derive_seed(seed, round_idx, rep)
        result = train_round(
            encs["train"],
            encs["val"],
            encs["test"],
            cfg,
            settings,
            run_seed,
            derive_severity=flags.severity_from_formula,
        )
        info = {
            "train_s": result.train_seconds,
            "eval_s": result.eval_seconds,
            "epochs": result.epochs_run,
        }
        return result.per_task, info
    targets = (
        [t for t, _ in cfg.tasks]
        if flags.single_task == "all"
        else [flags.single_task]
    )
    per_task: dict[str, dict[str, float]] = {}
    info = {"train_s": 0.0, "eval_s": 0.0, "epochs": 0}
    for lane, task in enumerate(targets):
        n_labels = dict(cfg.tasks)[task]
        cfg_t = replace(cfg, tasks=[(task, n_labels)])
        run_seed = _derive_seed(seed, round_idx, rep, lane + 1)
        result = train_round(
            encs["train"], encs["val"], encs["test"], cfg_t, settings, run_seed
        )
        per_task[task] = result.per_task[task]
        info["train_s"] += result.train_seconds
        info["eval_s"] += result.eval_seconds
        info["epochs"] = max(info["epochs"], result.epochs_run)
    return per_task, info


def format_report_table(body: dict) -> str:
    """Plain-text table: per-task F1/MCC from the aggregate block."""
    agg = body["aggregate"]
    tasks = list(agg["per_task"])
    width = max(len(t) for t in tasks + ["Average"]) + 2
    lines = [f"{'CVSS metric':<{width}}{'F1-Score':>10}{'MCC':>10}"]
    lines.append("-" * (width + 20))
    for t in tasks:
        row = agg["per_task"][t]
        lines.append(f"{t:<{width}}{row['macro_f1']:>10.3f}{row['mcc']:>10.3f}")
    lines.append("-" * (width + 20))
    lines.append(f"{'Average':<{width}}{agg['mean_macro_f1']:>10.3f}{agg['mean_mcc']:>10.3f}")
    return "\n".join(lines)
