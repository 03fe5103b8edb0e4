"""Single entry point exposing the pipeline stages as subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gitio, miner
from .baselines import run_baseline_experiment
from .context import build_inputs
from .evaluate import (
    AblationFlags,
    TrainSettings,
    format_report_table,
    run_experiment,
    time_split,
    train_round,
)
from .ioutil import read_jsonl, write_json, write_jsonl
from .model import ModelConfig, default_tasks
from .tokenizer import EncodedCommit, Vocabulary, build_vocab, encode
from .types import (
    CommitRecord,
    CvssAssessment,
    SchemaViolation,
    TASK_LABELS,
    TASKS,
    VfcRecord,
)

log = logging.getLogger("commitcva")

ENV_PREFIX = "COMMITCVA_"

# flat config keys, their types and defaults; flags/env/file all share them
DEFAULTS: dict[str, tuple] = {
    "seed": (int, 0),
    "n": (int, 1024),
    "embed": (int, 300),
    "filters": (int, 128),
    "gru_hidden": (int, 128),
    "attn_hidden": (int, 128),
    "task_hidden": (int, 128),
    "dropout": (float, 0.2),
    "filter_sizes": (str, "1,3,5"),
    "vocab_max": (int, 10000),
    "lr": (float, 0.001),
    "batch_size": (int, 32),
    "epochs": (int, 50),
    "patience": (int, 5),
    "n_folds": (int, 12),
    "repeats": (int, 1),
    "max_files": (int, 100),
    "max_lines": (int, 10000),
}


def _resolve(args: argparse.Namespace, file_cfg: dict) -> dict:
    """Effective settings: flag > env > config file > default."""
    out = {}
    for key, (typ, default) in DEFAULTS.items():
        value = getattr(args, key, None)
        if value is None:
            env = os.environ.get(ENV_PREFIX + key.upper())
            if env is not None:
                value = typ(env)
            elif key in file_cfg:
                value = typ(file_cfg[key])
            else:
                value = default
        out[key] = value
    return out


def _model_config(cfg: dict, vocab_size: int, tasks=None) -> ModelConfig:
    return ModelConfig(
        n=cfg["n"],
        embed=cfg["embed"],
        vocab_size=vocab_size,
        filter_sizes=tuple(int(k) for k in str(cfg["filter_sizes"]).split(",")),
        filters=cfg["filters"],
        gru_hidden=cfg["gru_hidden"],
        attn_hidden=cfg["attn_hidden"],
        task_hidden=cfg["task_hidden"],
        dropout_rate=cfg["dropout"],
        tasks=tasks or default_tasks(),
    )


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--seed", type=int)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, help="input length")
    p.add_argument("--embed", type=int)
    p.add_argument("--filters", type=int)
    p.add_argument("--gru-hidden", dest="gru_hidden", type=int)
    p.add_argument("--attn-hidden", dest="attn_hidden", type=int)
    p.add_argument("--task-hidden", dest="task_hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--filter-sizes", dest="filter_sizes", help="e.g. 1,3,5")
    p.add_argument("--vocab-max", dest="vocab_max", type=int)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="commitcva",
        description="Mine vulnerability-contributing commits and predict CVSS v2 metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="load, filter and normalize VFCs from a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--repos", required=True, help="directory holding one repo per repo_id")
    p.add_argument("--out", required=True)
    p.add_argument("--max-files", dest="max_files", type=int)
    p.add_argument("--max-lines", dest="max_lines", type=int)

    p = sub.add_parser("trace", help="SZZ-trace VCCs from mined VFCs")
    _add_common(p)
    p.add_argument("--vfcs", required=True)
    p.add_argument("--repos", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("context", help="attach hunk and enclosing-scope inputs")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--repos", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-vocab", help="build the token vocabulary")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-max", dest="vocab_max", type=int)
    p.add_argument(
        "--train-folds",
        dest="train_folds",
        type=int,
        help="use only the oldest K of --n-folds time folds",
    )
    p.add_argument("--n-folds", dest="n_folds", type=int)

    p = sub.add_parser("encode", help="encode context records to fixed-length ids")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)

    p = sub.add_parser("train", help="train one model on encoded data")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--train", required=True, dest="train_path")
    p.add_argument("--val", dest="val_path", help="validation set for early stopping")
    p.add_argument("--vocab", help="vocabulary file (else size inferred from data)")
    p.add_argument("--out", required=True)
    p.add_argument("--single-task", dest="single_task", choices=TASKS)

    p = sub.add_parser("predict", help="predict CVSS metrics with a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="run the rolling-window evaluation protocol")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-folds", dest="n_folds", type=int)
    p.add_argument("--rounds", type=int, help="limit to the first N rounds")
    p.add_argument("--repeats", type=int)
    p.add_argument("--single-task", dest="single_task", help="a task name or 'all'")
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--hunks-only", action="store_true")
    p.add_argument("--severity-from-formula", action="store_true")

    p = sub.add_parser("baseline", help="run a baseline model under the same protocol")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=("scva", "xcva", "ucva"), default="scva")
    p.add_argument("--features", choices=("bow",), default="bow")
    p.add_argument("--classifier", choices=("lr", "knn"), default="lr")
    p.add_argument("--oversample", choices=("none", "ros", "smote"), default="none")
    p.add_argument("--smote-k", dest="smote_k", type=int, default=5)
    p.add_argument("--n-folds", dest="n_folds", type=int)
    p.add_argument("--vocab-max", dest="vocab_max", type=int)

    return parser


# -- stages ---------------------------------------------------------------------


def cmd_mine(args, cfg) -> None:
    vfcs = miner.read_manifest(args.manifest, args.repos)
    kept = miner.filter_vfcs(vfcs, cfg["max_files"], cfg["max_lines"])
    log.info("filtered %d -> %d VFCs", len(vfcs), len(kept))
    out = []
    for rec in kept:
        repo = Path(args.repos) / rec.commit.repo_id
        rec.commit = miner.normalize_changes(rec.commit, repo)
        out.append(rec.as_dict())
    write_jsonl(args.out, out)


def cmd_trace(args, cfg) -> None:
    caches: dict[str, miner._RepoCache] = {}
    traced = []
    for raw in read_jsonl(args.vfcs):
        vfc = VfcRecord.from_dict(raw)
        repo = Path(args.repos) / vfc.commit.repo_id
        cache = caches.setdefault(vfc.commit.repo_id, miner._RepoCache(repo))
        for commit, _lines in miner.szz_trace(vfc, repo, cache):
            traced.append((commit, vfc.labels))
    vccs = miner.dedup_vccs(traced)
    log.info("traced %d VCC rows", len(vccs))
    write_jsonl(args.out, [v.as_dict() for v in vccs])


def cmd_context(args, cfg) -> None:
    out = []
    for raw in read_jsonl(args.corpus):
        commit = CommitRecord.from_dict(raw)
        repo = Path(args.repos) / commit.repo_id
        pre_rev = commit.parent_hashes[0] if commit.parent_hashes else None
        pre_sources = {
            fc.path_pre: (
                gitio.file_at(repo, pre_rev, fc.path_pre) if pre_rev else None
            )
            for fc in commit.files
            if fc.path_pre
        }
        post_sources = {
            fc.path_post: gitio.file_at(repo, commit.commit_hash, fc.path_post)
            for fc in commit.files
            if fc.path_post
        }
        raw.update(build_inputs(commit, pre_sources, post_sources))
        out.append(raw)
    write_jsonl(args.out, out)


def _corpus_texts(records: list[dict]):
    for rec in records:
        for side in ("pre_hunks", "post_hunks", "pre_ctx", "post_ctx"):
            if side not in rec:
                raise SchemaViolation(f"context record missing field: {side}")
            yield rec[side]


def cmd_build_vocab(args, cfg) -> None:
    records = list(read_jsonl(args.corpus))
    if args.train_folds is not None:
        plan = time_split(records, cfg["n_folds"])
        keep = plan.indices(list(range(args.train_folds)))
        records = [records[i] for i in keep]
        log.info("vocabulary restricted to the oldest %d folds", args.train_folds)
    vocab = build_vocab(_corpus_texts(records), max_size=cfg["vocab_max"])
    vocab.save(args.out)
    log.info("vocabulary of %d tokens (+2 reserved) written", len(vocab.token_to_id))


def cmd_encode(args, cfg) -> None:
    vocab = Vocabulary.load(args.vocab)
    out = []
    for rec in read_jsonl(args.corpus):
        for side in ("pre_hunks", "post_hunks", "pre_ctx", "post_ctx"):
            if side not in rec:
                raise SchemaViolation(f"context record missing field: {side}")
        labels = CvssAssessment.from_dict(rec["labels"]) if "labels" in rec else None
        enc = encode(
            {s: rec[s] for s in ("pre_hunks", "post_hunks", "pre_ctx", "post_ctx")},
            vocab,
            n=cfg["n"],
            commit_id=rec.get("commit_hash", ""),
            labels=labels,
            timestamp=int(rec.get("timestamp", 0)),
        )
        out.append(enc.as_dict())
    write_jsonl(args.out, out)


def _load_encoded(path: str) -> list[EncodedCommit]:
    return [EncodedCommit.from_dict(rec) for rec in read_jsonl(path)]


def cmd_train(args, cfg) -> None:
    from .autograd import save_checkpoint

    train_encs = _load_encoded(args.train_path)
    if not train_encs:
        raise SchemaViolation(f"no records in {args.train_path}")
    if any(e.labels is None for e in train_encs):
        raise SchemaViolation("training data requires a labels object on every record")
    val_encs = _load_encoded(args.val_path) if args.val_path else train_encs
    n = len(train_encs[0].sides["pre_hunks"])
    if args.vocab:
        vocab_size = Vocabulary.load(args.vocab).size
    else:
        vocab_size = (
            max(max(ids) for e in train_encs + val_encs for ids in e.sides.values()) + 1
        )
    tasks = default_tasks()
    if args.single_task:
        tasks = [(args.single_task, len(TASK_LABELS[args.single_task]))]
    config = _model_config({**cfg, "n": n}, vocab_size, tasks)
    settings = TrainSettings(
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        patience=cfg["patience"],
    )
    result = train_round(train_encs, val_encs, val_encs, config, settings, cfg["seed"])
    save_checkpoint(
        args.out,
        result.params,
        {f"bn:{k}:mean": s.mean for k, s in result.bn.items()}
        | {f"bn:{k}:var": s.var for k, s in result.bn.items()},
        {
            "config": config.to_dict(),
            "config_hash": config.config_hash(),
            "seed": cfg["seed"],
            "best_epoch": result.best_epoch,
            "epochs_run": result.epochs_run,
        },
    )
    log.info(
        "trained %d epoch(s), best validation epoch %d; checkpoint at %s",
        result.epochs_run,
        result.best_epoch,
        args.out,
    )


def cmd_predict(args, cfg) -> None:
    from .autograd import BnState, load_checkpoint
    from .evaluate import dataset_arrays, predict_dataset

    params, buffers, meta = load_checkpoint(args.checkpoint)
    config = ModelConfig.from_dict(meta["config"])
    bn = {}
    for key in buffers:
        _, name, kind = key.split(":")
        bn.setdefault(name, BnState(np.zeros(1), np.ones(1)))
        setattr(bn[name], "mean" if kind == "mean" else "var", buffers[key])
    encs = _load_encoded(args.data)
    sides, _ = dataset_arrays(encs, config)
    preds, probs = predict_dataset(params, bn, config, sides)
    out = []
    for i, enc in enumerate(encs):
        tasks_out = {}
        for task, _ in config.tasks:
            labels = TASK_LABELS[task]
            tasks_out[task] = {
                "label": labels[int(preds[task][i])],
                "probs": [float(x) for x in probs[task][i]],
            }
        out.append({"commit_id": enc.commit_id, "tasks": tasks_out})
    write_jsonl(args.out, out)


def cmd_evaluate(args, cfg) -> None:
    records = list(read_jsonl(args.corpus))
    config = _model_config(cfg, vocab_size=cfg["vocab_max"] + 2)
    settings = TrainSettings(
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        patience=cfg["patience"],
    )
    ablation = AblationFlags(
        single_task=args.single_task,
        no_attention=args.no_attention,
        hunks_only=args.hunks_only,
        severity_from_formula=args.severity_from_formula,
    )
    report = run_experiment(
        records,
        config,
        settings,
        n_folds=cfg["n_folds"],
        repeats=cfg["repeats"],
        seed=cfg["seed"],
        ablation=ablation,
        vocab_max=cfg["vocab_max"],
        max_rounds=args.rounds,
    )
    write_json(args.out, report.body)
    write_json(str(args.out) + ".timings.json", report.timings)
    print(format_report_table(report.body))


def cmd_baseline(args, cfg) -> None:
    records = list(read_jsonl(args.corpus))
    report = run_baseline_experiment(
        records,
        model=args.model,
        classifier=args.classifier,
        oversample_method=args.oversample,
        smote_k=args.smote_k,
        n_folds=cfg["n_folds"],
        seed=cfg["seed"],
        vocab_max=cfg["vocab_max"],
    )
    write_json(args.out, report.body)
    write_json(str(args.out) + ".timings.json", report.timings)
    print(format_report_table(report.body))


_COMMANDS = {
    "mine": cmd_mine,
    "trace": cmd_trace,
    "context": cmd_context,
    "build-vocab": cmd_build_vocab,
    "encode": cmd_encode,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            _fail("MissingInput", f"config file not found: {args.config}")
            return 2
        except json.JSONDecodeError as exc:
            _fail("ConfigParse", f"bad config file {args.config}: {exc}")
            return 2
    cfg = _resolve(args, file_cfg)
    try:
        _COMMANDS[args.command](args, cfg)
    except FileNotFoundError as exc:
        _fail("MissingInput", str(exc))
        return 2
    except SchemaViolation as exc:
        _fail("SchemaViolation", str(exc))
        return 2
    except (ValueError, RuntimeError, gitio.GitError) as exc:
        _fail(type(exc).__name__, str(exc))
        return 1
    return 0


def _fail(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
