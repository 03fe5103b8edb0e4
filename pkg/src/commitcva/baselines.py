"""Comparison models: BoW features, per-task and extreme-multiclass supervised
classifiers, k-means clustering with majority labels, and oversampling."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.cluster import KMeans
from sklearn.linear_model import LogisticRegression
from sklearn.multiclass import OneVsRestClassifier
from sklearn.neighbors import KNeighborsClassifier, NearestNeighbors

from .evaluate import (
    MetricsReport,
    _round_rows,
    confusion_matrix,
    macro_f1,
    mcc_multiclass,
    time_split,
)
from .tokenizer import INPUT_SIDES, Vocabulary, build_vocab, tokenize
from .types import TASK_LABELS, TASKS, CvssAssessment

log = logging.getLogger(__name__)

LR_GRID = [
    {"penalty": penalty, "C": c}
    for penalty in ("l1", "l2")
    for c in (0.01, 0.1, 1, 10, 100)
]
KNN_GRID = [{"n_neighbors": k, "p": p} for k in (11, 31, 51) for p in (1, 2)]
UCVA_K_GRID = [2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 25, 30, 35, 40, 45, 50]
SMOTE_K_GRID = [1, 5, 10, 15, 20]


# -- features -------------------------------------------------------------------


def bow_featurize(inputs: dict[str, str], vocab: Vocabulary) -> sp.csr_matrix:
    """Token counts per input, concatenated into one 4*|V| block vector."""
    size = vocab.size
    cols: list[int] = []
    vals: list[int] = []
    counts: dict[int, int] = {}
    for block, side in enumerate(INPUT_SIDES):
        counts.clear()
        for tok in tokenize(inputs.get(side, "")):
            i = vocab.id_for(tok)
            counts[i] = counts.get(i, 0) + 1
        base = block * size
        for i, c in sorted(counts.items()):
            cols.append(base + i)
            vals.append(c)
    rows = np.zeros(len(cols), dtype=np.int64)
    return sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64), (rows, np.asarray(cols, dtype=np.int64))),
        shape=(1, 4 * size),
    )


def bow_matrix(records: list[dict], vocab: Vocabulary) -> sp.csr_matrix:
    if not records:
        return sp.csr_matrix((0, 4 * vocab.size))
    return sp.vstack([bow_featurize(rec, vocab) for rec in records], format="csr")


# -- supervised models ------------------------------------------------------------


class ConstantClassifier:
    """Returned when training data holds a single class."""

    def __init__(self, label):
        self.label = label

    def fit(self, X, y):
        return self

    def predict(self, X):
        n = X.shape[0]
        return np.full(n, self.label)


def _make_classifier(kind: str, cfg: dict):
    if kind == "lr":
        return OneVsRestClassifier(
            LogisticRegression(
                penalty=cfg["penalty"],
                C=cfg["C"],
                solver="liblinear",
                max_iter=1000,
                random_state=0,
            )
        )
    if kind == "knn":
        return KNeighborsClassifier(
            n_neighbors=cfg["n_neighbors"],
            metric="manhattan" if cfg["p"] == 1 else "euclidean",
            algorithm="brute",
        )
    raise ValueError(f"unknown classifier: {kind}")


def _fit(kind: str, cfg: dict, X, y: np.ndarray):
    classes = np.unique(y)
    if classes.size < 2:
        log.warning("single-class training set; returning a constant classifier")
        return ConstantClassifier(classes[0])
    cfg = dict(cfg)
    if kind == "knn" and cfg["n_neighbors"] > len(y):
        cfg["n_neighbors"] = len(y)
    return _make_classifier(kind, cfg).fit(X, y)


def _val_mcc(model, X_val, y_val: np.ndarray, n_classes: int) -> float:
    preds = np.asarray(model.predict(X_val), dtype=np.int64)
    return mcc_multiclass(confusion_matrix(y_val, preds, n_classes))


def train_scva(
    X_train,
    y_train: np.ndarray,
    X_val,
    y_val: np.ndarray,
    classifier: str = "lr",
    grid: list[dict] | None = None,
    n_classes: int | None = None,
):
    """Grid-search one task's classifier on validation MCC; best model wins."""
    grid = grid if grid is not None else (LR_GRID if classifier == "lr" else KNN_GRID)
    n_classes = n_classes or int(max(y_train.max(), y_val.max())) + 1
    best = None
    for cfg in grid:
        model = _fit(classifier, cfg, X_train, y_train)
        score = _val_mcc(model, X_val, y_val, n_classes)
        if best is None or score > best[0]:
            best = (score, cfg, model)
    assert best is not None
    score, cfg, model = best
    return model, cfg, score


# -- extreme multiclass -------------------------------------------------------------

_XCVA_SEP = "|"


def xcva_encode(labels: CvssAssessment) -> str:
    """Ordered 7-tuple rendered positionally; decoding never substring-matches."""
    return _XCVA_SEP.join(getattr(labels, task) for task in TASKS)


def xcva_decode(composite: str) -> CvssAssessment:
    parts = composite.split(_XCVA_SEP)
    if len(parts) != len(TASKS):
        raise ValueError(f"composite label with {len(parts)} parts: {composite!r}")
    return CvssAssessment(**dict(zip(TASKS, parts)))


def _decode_task_indices(composites: np.ndarray, task: str) -> np.ndarray:
    pos = TASKS.index(task)
    labels = TASK_LABELS[task]
    return np.asarray(
        [labels.index(c.split(_XCVA_SEP)[pos]) for c in composites], dtype=np.int64
    )


# -- unsupervised -------------------------------------------------------------------


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, d)
    majorities: dict[str, np.ndarray]  # task -> per-cluster label index


def train_ucva(
    features,
    labels_by_task: dict[str, np.ndarray],
    k: int,
    seed: int = 0,
) -> ClusterModel:
    """k-means++ with 10 restarts; per-cluster majority label per task."""
    n = features.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds {n} training points")
    km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed)
    assign = km.fit_predict(features)
    majorities: dict[str, np.ndarray] = {}
    for task, y in labels_by_task.items():
        n_classes = len(TASK_LABELS[task])
        global_major = int(np.argmax(np.bincount(y, minlength=n_classes)))
        out = np.full(k, global_major, dtype=np.int64)
        for c in range(k):
            members = y[assign == c]
            if members.size:
                out[c] = int(np.argmax(np.bincount(members, minlength=n_classes)))
        majorities[task] = out
    return ClusterModel(k=k, centroids=km.cluster_centers_, majorities=majorities)


def _nearest_centroid(model: ClusterModel, features) -> np.ndarray:
    X = features.toarray() if sp.issparse(features) else np.asarray(features)
    d2 = ((X[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)  # ties -> lowest cluster index


def predict_ucva_indices(model: ClusterModel, features) -> dict[str, np.ndarray]:
    assign = _nearest_centroid(model, features)
    return {task: model.majorities[task][assign] for task in model.majorities}


def predict_ucva(model: ClusterModel, feature) -> CvssAssessment:
    """Nearest centroid's per-task majorities for one feature vector."""
    row = feature if feature.ndim == 2 or sp.issparse(feature) else feature[None, :]
    idx = predict_ucva_indices(model, row)
    return CvssAssessment(**{t: TASK_LABELS[t][int(idx[t][0])] for t in TASKS})


# -- oversampling -------------------------------------------------------------------


def ros_indices(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Original indices plus uniform-with-replacement duplicates, so every
    class reaches the majority count."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    target = counts.max()
    extra: list[np.ndarray] = []
    for cls, count in zip(classes, counts):
        need = target - count
        if need > 0:
            members = np.flatnonzero(y == cls)
            extra.append(rng.choice(members, size=need, replace=True))
    if not extra:
        return np.arange(len(y))
    return np.concatenate([np.arange(len(y))] + extra)


def _smote_synthetics(
    Xc: np.ndarray, need: int, smote_k: int, rng: np.random.Generator
) -> np.ndarray:
    m = Xc.shape[0]
    nn = NearestNeighbors(n_neighbors=min(smote_k + 1, m)).fit(Xc)
    neighbor_idx = nn.kneighbors(Xc, return_distance=False)[:, 1:]
    out = np.empty((need, Xc.shape[1]))
    for s in range(need):
        i = int(rng.integers(m))
        j = int(neighbor_idx[i][rng.integers(neighbor_idx.shape[1])])
        u = rng.random()
        out[s] = Xc[i] + u * (Xc[j] - Xc[i])
    return out


def oversample(
    X,
    y: np.ndarray,
    method: str = "ros",
    smote_k: int = 5,
    rng: np.random.Generator | None = None,
):
    """Balance the training view of one task; validation/test are never touched.

    ROS duplicates minority rows; SMOTE interpolates toward one of the
    smote_k nearest minority neighbors. Classes with at most smote_k members
    fall back to ROS with a warning.
    """
    rng = rng or np.random.default_rng(0)
    y = np.asarray(y)
    if method == "ros":
        idx = ros_indices(y, rng)
        return (X[idx], y[idx])
    if method != "smote":
        raise ValueError(f"unknown oversampling method: {method}")
    classes, counts = np.unique(y, return_counts=True)
    target = counts.max()
    sparse = sp.issparse(X)
    blocks = [X]
    new_labels = [y]
    for cls, count in zip(classes, counts):
        need = int(target - count)
        if need == 0:
            continue
        members = np.flatnonzero(y == cls)
        if count <= smote_k:
            log.warning(
                "class %s has %d samples (<= smote_k=%d); falling back to ROS",
                cls,
                count,
                smote_k,
            )
            dup = rng.choice(members, size=need, replace=True)
            blocks.append(X[dup])
        else:
            Xc = X[members].toarray() if sparse else np.asarray(X[members])
            synth = _smote_synthetics(Xc, need, smote_k, rng)
            blocks.append(sp.csr_matrix(synth) if sparse else synth)
        new_labels.append(np.full(need, cls, dtype=y.dtype))
    X_out = sp.vstack(blocks, format="csr") if sparse else np.vstack(blocks)
    return X_out, np.concatenate(new_labels)


# -- experiment harness ---------------------------------------------------------------


def _task_label_indices(records: list[dict], task: str) -> np.ndarray:
    labels = TASK_LABELS[task]
    return np.asarray([labels.index(rec["labels"][task]) for rec in records], dtype=np.int64)


def _test_metrics(y_true: np.ndarray, y_pred: np.ndarray, task: str) -> dict[str, float]:
    cm = confusion_matrix(y_true, y_pred, len(TASK_LABELS[task]))
    return {"mcc": mcc_multiclass(cm), "macro_f1": macro_f1(cm)}


def run_baseline_experiment(
    records: list[dict],
    model: str = "scva",
    classifier: str = "lr",
    oversample_method: str = "none",
    smote_k: int = 5,
    n_folds: int = 12,
    seed: int = 0,
    vocab_max: int = 10000,
) -> MetricsReport:
    """Same rolling protocol as the deep model, with BoW features."""
    plan = time_split(records, n_folds)
    round_reports = []
    round_timings = []
    for round_idx, (train_f, val_f, test_f) in enumerate(plan.rounds, start=1):
        t0 = time.perf_counter()
        subsets = {
            name: [records[i] for i in plan.indices(ids)]
            for name, ids in (("train", train_f), ("val", val_f), ("test", test_f))
        }
        vocab = build_vocab(
            (rec[side] for rec in subsets["train"] for side in INPUT_SIDES),
            max_size=vocab_max,
        )
        X = {name: bow_matrix(recs, vocab) for name, recs in subsets.items()}
        y = {
            name: {t: _task_label_indices(recs, t) for t in TASKS}
            for name, recs in subsets.items()
        }
        rng = np.random.default_rng(np.random.SeedSequence([seed, round_idx]))
        if model == "scva":
            per_task = _scva_round(X, y, classifier, oversample_method, smote_k, rng)
        elif model == "xcva":
            per_task = _xcva_round(subsets, X, y, classifier, oversample_method, rng)
        elif model == "ucva":
            per_task = _ucva_round(X, y, seed + round_idx)
        else:
            raise ValueError(f"unknown baseline model: {model}")
        round_reports.append({"round": round_idx, **_round_rows(per_task)})
        round_timings.append({"round": round_idx, "train_s": time.perf_counter() - t0})
    aggregate = {
        "mean_mcc": float(np.mean([r["mean_mcc"] for r in round_reports])),
        "mean_macro_f1": float(np.mean([r["mean_macro_f1"] for r in round_reports])),
        "per_task": {
            t: {
                m: float(np.mean([r["per_task"][t][m] for r in round_reports]))
                for m in ("mcc", "macro_f1")
            }
            for t in TASKS
        },
    }
    body = {
        "protocol": {
            "model": model,
            "features": "bow",
            "classifier": classifier if model != "ucva" else None,
            "oversample": oversample_method,
            "smote_k": smote_k if oversample_method == "smote" else None,
            "n_folds": n_folds,
            "seed": seed,
            "vocab_max": vocab_max,
        },
        "rounds": round_reports,
        "aggregate": aggregate,
    }
    timings = {
        "rounds": round_timings,
        "train_s": float(sum(t["train_s"] for t in round_timings)),
    }
    return MetricsReport(body=body, timings=timings)


def _scva_round(X, y, classifier, oversample_method, smote_k, rng):
    per_task = {}
    for task in TASKS:
        X_tr, y_tr = X["train"], y["train"][task]
        if oversample_method != "none":
            X_tr, y_tr = oversample(X_tr, y_tr, oversample_method, smote_k, rng)
        model, _, _ = train_scva(
            X_tr, y_tr, X["val"], y["val"][task], classifier,
            n_classes=len(TASK_LABELS[task]),
        )
        preds = np.asarray(model.predict(X["test"]), dtype=np.int64)
        per_task[task] = _test_metrics(y["test"][task], preds, task)
    return per_task


def _xcva_round(subsets, X, y, classifier, oversample_method, rng):
    composites = {
        name: np.asarray(
            [xcva_encode(CvssAssessment.from_dict(rec["labels"])) for rec in recs]
        )
        for name, recs in subsets.items()
    }
    X_tr, y_tr = X["train"], composites["train"]
    if oversample_method == "ros":
        idx = ros_indices(_composite_indices(y_tr), rng)
        X_tr, y_tr = X_tr[idx], y_tr[idx]
    elif oversample_method == "smote":
        log.warning("SMOTE is undefined for composite labels; skipping oversampling")
    grid = LR_GRID if classifier == "lr" else KNN_GRID
    trained = [(cfg, _fit(classifier, cfg, X_tr, y_tr)) for cfg in grid]
    per_task = {}
    for task in TASKS:
        n_classes = len(TASK_LABELS[task])
        best = None
        for cfg, model in trained:
            val_pred = _decode_task_indices(np.asarray(model.predict(X["val"])), task)
            score = mcc_multiclass(confusion_matrix(y["val"][task], val_pred, n_classes))
            if best is None or score > best[0]:
                best = (score, model)
        assert best is not None
        test_pred = _decode_task_indices(np.asarray(best[1].predict(X["test"])), task)
        per_task[task] = _test_metrics(y["test"][task], test_pred, task)
    return per_task


def _composite_indices(composites: np.ndarray) -> np.ndarray:
    uniq = {c: i for i, c in enumerate(sorted(set(composites)))}
    return np.asarray([uniq[c] for c in composites], dtype=np.int64)


def _ucva_round(X, y, seed):
    n_train = X["train"].shape[0]
    ks = [k for k in UCVA_K_GRID if k <= n_train]
    models = [train_ucva(X["train"], y["train"], k, seed) for k in ks]
    per_task = {}
    for task in TASKS:
        n_classes = len(TASK_LABELS[task])
        best = None
        for m in models:
            val_pred = predict_ucva_indices(m, X["val"])[task]
            score = mcc_multiclass(confusion_matrix(y["val"][task], val_pred, n_classes))
            if best is None or score > best[0]:
                best = (score, m)
        assert best is not None
        test_pred = predict_ucva_indices(best[1], X["test"])[task]
        per_task[task] = _test_metrics(y["test"][task], test_pred, task)
    return per_task
