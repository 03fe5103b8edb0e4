"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion lines.
"""

import json
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from commitcva import autograd as ag
from commitcva import miner
from commitcva.autograd import Adam, BnState, Tensor
from commitcva.cli import main as cli_main
from commitcva.context import extract_ces
from commitcva.evaluate import (
    TrainSettings,
    confusion_matrix,
    dataset_arrays,
    macro_f1,
    mcc_multiclass,
    predict_dataset,
    time_split,
    train_round,
)
from commitcva.ioutil import write_jsonl
from commitcva.javascopes import parse_ast
from commitcva.model import (
    ModelConfig,
    forward_commit,
    init_params,
    multi_task_loss,
    predict_heads,
)
from commitcva.tokenizer import EncodedCommit
from commitcva.types import TASK_LABELS, CvssAssessment, VfcRecord, parse_iso8601
from conftest import RepoBuilder, check_grads, labels_dict, max_rel_err

DATA = Path(__file__).parent / "data" / "ces"


@contextmanager
def criterion(num: int, name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {num:02d} {name}: FAIL")
        raise
    print(f"ACCEPTANCE {num:02d} {name}: PASS")


REDUCED = dict(
    n=16, embed=8, vocab_size=16, filters=4, gru_hidden=8, attn_hidden=8,
    task_hidden=8, dropout_rate=0.0,
)


def _synthetic_encs(cfg, count, seed):
    rng = np.random.default_rng(seed)
    encs = []
    for i in range(count):
        sides = {
            s: [int(x) for x in rng.integers(2, cfg.vocab_size, size=cfg.n)]
            for s in cfg.inputs
        }
        labels = CvssAssessment(
            confidentiality=["None", "Partial", "Complete"][i % 3],
            integrity=["None", "Partial", "Complete"][(i // 3) % 3],
            availability=["None", "Partial", "Complete"][(i // 2) % 3],
            access_vector=["Local", "Adjacent Network", "Network"][i % 3],
            access_complexity=["Low", "Medium", "High"][(i + 1) % 3],
            authentication=["None", "Single", "Multiple"][(i // 4) % 3],
            severity=["Low", "Medium", "High"][(i // 5) % 3],
        )
        encs.append(
            EncodedCommit(
                commit_id=f"c{i:03d}",
                sides=sides,
                masks={s: [v != 0 for v in ids] for s, ids in sides.items()},
                labels=labels,
                timestamp=1000 + i,
            )
        )
    return encs


# -- 1 ------------------------------------------------------------------------


def _op_gradient_suite() -> float:
    """Finite-difference checks for every differentiable op, >=20 inputs each."""
    rng = np.random.default_rng(100)
    worst = 0.0

    def away(x, margin=0.05):
        return np.where(np.abs(x) < margin, x + 2 * margin, x)

    for i in range(20):
        a = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, (4,)), requires_grad=True)
        m1 = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
        m2 = Tensor(rng.uniform(-1, 1, (4, 2)), requires_grad=True)
        x = Tensor(away(rng.uniform(-1, 1, (3, 4))), requires_grad=True)
        pos = Tensor(rng.uniform(0.2, 2.0, (3, 4)), requires_grad=True)
        table = Tensor(rng.uniform(-1, 1, (6, 3)), requires_grad=True)
        ids = rng.integers(0, 6, (2, 5))
        cx = Tensor(rng.uniform(-1, 1, (2, 7, 3)), requires_grad=True)
        cw = Tensor(rng.uniform(-1, 1, (3, 3, 2)), requires_grad=True)
        gamma = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)
        beta = Tensor(rng.uniform(-1, 1, 4), requires_grad=True)
        labels = rng.integers(0, 4, 3)
        r34 = Tensor(rng.normal(size=(3, 4)))
        r32 = Tensor(rng.normal(size=(3, 2)))
        r253 = Tensor(rng.normal(size=(2, 5, 3)))
        r252 = Tensor(rng.normal(size=(2, 5, 2)))
        r38 = Tensor(rng.normal(size=(3, 8)))
        r43 = Tensor(rng.normal(size=(4, 3)))
        r32b = Tensor(rng.normal(size=(3, 2)))
        r4 = Tensor(rng.normal(size=(4,)))
        cases = [
            (lambda: ag.tsum(ag.add(a, b) * r34), {"a": a, "b": b}),
            (lambda: ag.tsum(ag.sub(a, b) * r34), {"a": a, "b": b}),
            (lambda: ag.tsum(ag.mul(a, b) * r34), {"a": a, "b": b}),
            (lambda: ag.tsum(ag.rsub(1.0, a) * r34), {"a": a}),
            (lambda: ag.tsum(ag.matmul(m1, m2) * r32), {"m1": m1, "m2": m2}),
            (lambda: ag.tsum(ag.sigmoid(x) * r34), {"x": x}),
            (lambda: ag.tsum(ag.tanh(x) * r34), {"x": x}),
            (lambda: ag.tsum(ag.relu(x) * r34), {"x": x}),
            (lambda: ag.tsum(ag.softmax(x) * r34), {"x": x}),
            (lambda: ag.tsum(ag.log(pos) * r34), {"p": pos}),
            (lambda: ag.tsum(ag.clip_min(x, 0.0) * r34), {"x": x}),
            (lambda: ag.tsum(ag.concat([a, m1], axis=1) * r38), {"a": a, "m1": m1}),
            (lambda: ag.tsum(ag.reshape(a, (4, 3)) * r43), {"a": a}),
            (lambda: ag.tsum(ag.tslice(a, (slice(None), slice(1, 3))) * r32b), {"a": a}),
            (lambda: ag.tsum(ag.tsum(a, axis=0) * r4), {"a": a}),
            (lambda: ag.tsum(ag.embedding_lookup(table, ids) * r253), {"t": table}),
            (lambda: ag.tsum(ag.conv1d(cx, cw) * r252), {"cx": cx, "cw": cw}),
            (lambda: ag.cross_entropy(ag.softmax(x), labels), {"x": x}),
        ]

        def bn_loss():
            state = BnState.for_features(4)
            return ag.tsum(ag.batch_norm(a, gamma, beta, state, training=True) * r34)

        cases.append((bn_loss, {"a": a, "g": gamma, "be": beta}))

        def dropout_loss(i=i):
            local = np.random.default_rng(500 + i)
            return ag.tsum(ag.dropout(a, 0.3, local, training=True) * r34)

        cases.append((dropout_loss, {"a": a}))
        for build, tensors in cases:
            worst = max(worst, check_grads(build, tensors))
    return worst


def _relu_margin(loss_value_fn) -> float:
    """Smallest |pre-activation| any ReLU sees during one forward pass."""
    mins = [np.inf]
    orig = ag.relu

    def spy(x):
        if x.data.size:
            mins.append(float(np.min(np.abs(x.data))))
        return orig(x)

    ag.relu = spy
    try:
        loss_value_fn()
    finally:
        ag.relu = orig
    return min(mins)


def _full_model_gradient_suite() -> float:
    """Directional and per-tensor coordinate FD checks on the reduced model."""
    cfg = ModelConfig(**REDUCED)
    worst = 0.0
    eps = 1e-5
    rng = np.random.default_rng(200)
    names: list[str] = []
    cursor = 0
    for trial in range(20):
        def loss_tensor():
            bn = {f"conv{k}": BnState.for_features(cfg.filters) for k in cfg.filter_sizes}
            vec = forward_commit(batch, params, bn, cfg, training=True)
            probs = predict_heads(vec, params, cfg, training=True)
            return multi_task_loss(probs, labels)

        def loss_value():
            with ag.no_grad():
                return float(loss_tensor().data)

        # keep every ReLU input away from its kink, so central differences
        # measure the true local derivative rather than a sign crossing; an
        # eps step moves any pre-activation by < 1e-5, well under the margin
        for _attempt in range(200):
            params, _ = init_params(cfg, rng)
            batch = {
                s: rng.integers(0, cfg.vocab_size, size=(1, cfg.n)) for s in cfg.inputs
            }
            labels = {t: rng.integers(0, c, size=1) for t, c in cfg.tasks}
            if _relu_margin(loss_value) > 5e-5:
                break
        else:
            raise AssertionError("could not sample a kink-free input")
        names = sorted(params)

        loss = loss_tensor()
        ag.backward(loss)
        grads = {k: p.grad.copy() for k, p in params.items()}
        for p in params.values():
            p.grad = None
        # directional derivative over every parameter at once (unit direction,
        # so the eps step cannot push an activation across a kink)
        direction = {k: rng.normal(size=params[k].data.shape) for k in names}
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in direction.values()))
        direction = {k: d / norm for k, d in direction.items()}
        for k in names:
            params[k].data += eps * direction[k]
        f_plus = loss_value()
        for k in names:
            params[k].data -= 2 * eps * direction[k]
        f_minus = loss_value()
        for k in names:
            params[k].data += eps * direction[k]
        fd_dir = (f_plus - f_minus) / (2 * eps)
        ad_dir = sum(float(np.sum(grads[k] * direction[k])) for k in names)
        worst = max(worst, max_rel_err(np.array([ad_dir]), np.array([fd_dir])))
        # coordinate checks, round-robin so every tensor gets visited
        for _ in range(4):
            name = names[cursor % len(names)]
            cursor += 1
            data = params[name].data
            flat = data.reshape(-1)
            for idx in rng.integers(0, flat.size, size=2):
                orig = flat[idx]
                flat[idx] = orig + eps
                fp = loss_value()
                flat[idx] = orig - eps
                fm = loss_value()
                flat[idx] = orig
                fd = (fp - fm) / (2 * eps)
                adg = grads[name].reshape(-1)[idx]
                worst = max(worst, max_rel_err(np.array([adg]), np.array([fd])))
    assert cursor >= len(names), "round-robin must visit every parameter tensor"
    return worst


def test_criterion_01_gradient_oracle():
    with criterion(1, "gradient oracle (ops + full reduced model)"):
        t0 = time.perf_counter()
        worst_ops = _op_gradient_suite()
        worst_model = _full_model_gradient_suite()
        elapsed = time.perf_counter() - t0
        assert worst_ops < 1e-4, f"op gradient error {worst_ops:.2e}"
        assert worst_model < 1e-4, f"model gradient error {worst_model:.2e}"
        assert elapsed < 120.0, f"gradient oracle took {elapsed:.1f}s"


# -- 2 ------------------------------------------------------------------------


def test_criterion_02_architecture_shapes():
    with criterion(2, "architecture shapes at paper defaults"):
        cfg = ModelConfig()  # n=1024, embed=300, filters=128, hidden=128
        params, bn = init_params(cfg, np.random.default_rng(0))
        ids = np.random.default_rng(1).integers(0, cfg.vocab_size, size=(1, cfg.n))
        with ag.no_grad():
            emb = ag.embedding_lookup(params["embedding"], ids)
            for k in (1, 3, 5):
                out = ag.conv1d(emb, params[f"conv{k}.w"])
                assert out.data.shape == (1, 1024 - k + 1, 128)
            vec = forward_commit({s: ids for s in cfg.inputs}, params, bn, cfg)
        assert vec.data.shape == (1, 1536)
        assert cfg.commit_dim == 1536


# -- 3 ------------------------------------------------------------------------


def test_criterion_03_loss_anchors():
    with criterion(3, "loss anchors"):
        perfect = {f"t{i}": Tensor(np.eye(3)[[1]]) for i in range(7)}
        labels = {f"t{i}": np.array([1]) for i in range(7)}
        assert float(multi_task_loss(perfect, labels).data) < 1e-6
        uniform = {f"t{i}": Tensor(np.full((1, 3), 1 / 3)) for i in range(7)}
        loss = float(multi_task_loss(uniform, labels).data)
        assert abs(loss - 7 * np.log(3)) < 1e-6


# -- 4 ------------------------------------------------------------------------


def _mcc_covariance_oracle(y_true, y_pred, n_classes) -> float:
    """Sample-level covariance form of the multi-class correlation."""
    n = len(y_true)
    X = np.zeros((n, n_classes))
    Y = np.zeros((n, n_classes))
    X[np.arange(n), y_true] = 1.0
    Y[np.arange(n), y_pred] = 1.0
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    cov_xy = float((Xc * Yc).sum())
    cov_xx = float((Xc * Xc).sum())
    cov_yy = float((Yc * Yc).sum())
    if cov_xx == 0.0 or cov_yy == 0.0:
        return 0.0
    return cov_xy / np.sqrt(cov_xx * cov_yy)


def test_criterion_04_metric_oracle():
    with criterion(4, "metric oracle (MCC, macro-F1)"):
        from sklearn.metrics import matthews_corrcoef

        rng = np.random.default_rng(4)
        for trial in range(1000):
            n_classes = int(rng.integers(2, 6))
            n = int(rng.integers(5, 80))
            y_true = rng.integers(0, n_classes, size=n)
            y_pred = rng.integers(0, n_classes, size=n)
            cm = confusion_matrix(y_true, y_pred, n_classes)
            ours = mcc_multiclass(cm)
            oracle = _mcc_covariance_oracle(y_true, y_pred, n_classes)
            assert abs(ours - oracle) < 1e-10
            assert abs(ours - matthews_corrcoef(y_true, y_pred)) < 1e-10
        # binary case equals the classical formula
        cm = np.array([[6, 2], [1, 3]])
        tn, fp, fn, tp = 6, 2, 1, 3
        classic = (tp * tn - fp * fn) / np.sqrt(
            (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        )
        assert abs(mcc_multiclass(cm) - classic) < 1e-12
        # macro-F1 hand examples
        assert macro_f1(np.diag([4, 4])) == 1.0
        assert abs(macro_f1(np.array([[5, 0], [5, 0]])) - 1 / 3) < 1e-12
        one_missed = np.array([[3, 1], [0, 4]])
        f1_a = 2 * 3 / (2 * 3 + 1 + 0)
        f1_b = 2 * 4 / (2 * 4 + 0 + 1)
        assert abs(macro_f1(one_missed) - (f1_a + f1_b) / 2) < 1e-12


# -- 5 ------------------------------------------------------------------------


def test_criterion_05_overfit_sanity():
    with criterion(5, "overfit sanity (16 commits, train MCC 1.0)"):
        t0 = time.perf_counter()
        cfg = ModelConfig(**REDUCED)
        encs = _synthetic_encs(cfg, 16, seed=42)
        params, bn = init_params(cfg, np.random.default_rng(1))
        opt = Adam(params, lr=0.001)
        sides, labels = dataset_arrays(encs, cfg)
        rng = np.random.default_rng(2)
        reached = None
        for epoch in range(1, 201):
            vec = forward_commit(sides, params, bn, cfg, training=True, rng=rng)
            probs = predict_heads(vec, params, cfg, training=True, rng=rng)
            loss = multi_task_loss(probs, labels)
            ag.backward(loss)
            opt.step()
            opt.zero_grad()
            preds, _ = predict_dataset(params, bn, cfg, sides)
            mccs = [
                mcc_multiclass(confusion_matrix(labels[t], preds[t], c))
                for t, c in cfg.tasks
            ]
            if min(mccs) >= 1.0:
                reached = epoch
                break
        elapsed = time.perf_counter() - t0
        assert reached is not None, "train MCC never reached 1.0 on all 7 tasks"
        assert reached <= 200
        assert elapsed < 600.0, f"overfit run took {elapsed:.0f}s"


# -- 6 ------------------------------------------------------------------------


def test_criterion_06_ces_golden_corpus():
    with criterion(6, "CES golden corpus"):
        annotations = json.loads((DATA / "annotations.json").read_text())
        files = {a["file"] for a in annotations}
        types = {a["type"] for a in annotations}
        assert len(files) >= 10
        assert {
            "class", "interface", "enum_decl", "method", "if_else", "switch",
            "for_while_do", "try_catch",
        } <= types
        mismatches = []
        for a in annotations:
            source = (DATA / a["file"]).read_text()
            scope = extract_ces(parse_ast(source), tuple(a["hunk"]), source)
            got = (scope.node_type, scope.start_line, scope.end_line)
            want = (a["type"], a["start"], a["end"])
            if got != want:
                mismatches.append((a["file"], a["hunk"], want, got))
        assert not mismatches, f"CES mismatches: {mismatches}"


# -- 7 ------------------------------------------------------------------------


BASE_JAVA = """class Vuln {
    void f() {
        int risky = 1;
        use(risky);
    }
}
"""


def _vfc_for(repo, sha, published="2020-06-01T00:00:00Z"):
    from commitcva import gitio

    commit = gitio.load_commit(repo.path, "repo", sha)
    commit = miner.normalize_changes(commit, repo.path)
    return VfcRecord(
        commit=commit,
        advisory_id="CVE-T",
        sv_published_date=parse_iso8601(published),
        labels=CvssAssessment(**labels_dict()),
    )


def test_criterion_07_szz_fixture_suite(tmp_path):
    with criterion(7, "SZZ fixture suite"):
        # add -> modify chain
        repo = RepoBuilder(tmp_path / "chain")
        repo.write("V.java", BASE_JAVA)
        repo.commit("add", "2020-01-01T00:00:00Z")
        repo.write("V.java", BASE_JAVA.replace("int risky = 1;", "int risky = 2;"))
        b = repo.commit("modify", "2020-02-01T00:00:00Z")
        repo.write("V.java", BASE_JAVA.replace("int risky = 1;", "int safe = 0;"))
        fix = repo.commit("fix", "2020-05-01T00:00:00Z")
        traced = {c.commit_hash for c, _ in miner.szz_trace(_vfc_for(repo, fix), repo.path)}
        assert traced == {b}

        # rename chain
        repo = RepoBuilder(tmp_path / "rename")
        repo.write("F.java", BASE_JAVA)
        a = repo.commit("add", "2020-01-01T00:00:00Z")
        repo.move("F.java", "G.java")
        repo.commit("rename", "2020-02-01T00:00:00Z")
        repo.write("G.java", BASE_JAVA.replace("int risky = 1;", "int safe = 0;"))
        fix = repo.commit("fix", "2020-05-01T00:00:00Z")
        traced = {c.commit_hash for c, _ in miner.szz_trace(_vfc_for(repo, fix), repo.path)}
        assert traced == {a}

        # whitespace-only chain
        repo = RepoBuilder(tmp_path / "ws")
        repo.write("V.java", BASE_JAVA)
        a = repo.commit("add", "2020-01-01T00:00:00Z")
        repo.write("V.java", BASE_JAVA.replace("int risky = 1;", "int   risky =   1;"))
        repo.commit("reformat", "2020-02-01T00:00:00Z")
        repo.write("V.java", BASE_JAVA.replace("int risky = 1;", "int safe = 0;"))
        fix = repo.commit("fix", "2020-05-01T00:00:00Z")
        traced = {c.commit_hash for c, _ in miner.szz_trace(_vfc_for(repo, fix), repo.path)}
        assert traced == {a}

        # post-publish-date injector: the only candidate is dated after the advisory
        repo = RepoBuilder(tmp_path / "late")
        repo.write("V.java", BASE_JAVA)
        repo.commit("add", "2020-01-01T00:00:00Z")
        repo.write("V.java", BASE_JAVA.replace("int risky = 1;", "int risky = 3;"))
        repo.commit("late modify", "2020-03-01T00:00:00Z")
        repo.write("V.java", BASE_JAVA.replace("int risky = 1;", "int safe = 0;"))
        fix = repo.commit("fix", "2020-05-01T00:00:00Z")
        vfc = _vfc_for(repo, fix, published="2020-02-01T00:00:00Z")
        assert miner.szz_trace(vfc, repo.path) == []


# -- 8 ------------------------------------------------------------------------


def test_criterion_08_split_protocol():
    with criterion(8, "time-based split protocol"):
        rng = np.random.default_rng(8)
        records = [
            {"commit_hash": f"c{i:03d}", "timestamp": int(ts)}
            for i, ts in enumerate(rng.permutation(np.arange(5000, 5120)))
        ]
        plan = time_split(records, 12)
        assert [len(f) for f in plan.folds] == [10] * 12
        rounds = plan.rounds
        assert len(rounds) == 10
        for i, (train_f, val_f, test_f) in enumerate(rounds, start=1):
            assert train_f == list(range(i))
            assert val_f == i and test_f == i + 1
            train_ts = [records[j]["timestamp"] for j in plan.indices(train_f)]
            val_ts = [records[j]["timestamp"] for j in plan.indices(val_f)]
            test_ts = [records[j]["timestamp"] for j in plan.indices(test_f)]
            assert max(train_ts) <= min(val_ts) <= max(val_ts) <= min(test_ts)


# -- 9 ------------------------------------------------------------------------


def test_criterion_09_multitask_efficiency():
    with criterion(9, "multi-task training efficiency"):
        cfg = ModelConfig(**REDUCED)
        encs = _synthetic_encs(cfg, 24, seed=9)
        train, val, test = encs[:16], encs[16:20], encs[20:]
        settings = TrainSettings(epochs=3, patience=50, batch_size=8)
        t0 = time.perf_counter()
        train_round(train, val, test, cfg, settings, seed=1)
        multi_time = time.perf_counter() - t0
        single_total = 0.0
        from dataclasses import replace

        for task, c in cfg.tasks:
            cfg_t = replace(cfg, tasks=[(task, c)])
            t0 = time.perf_counter()
            train_round(train, val, test, cfg_t, settings, seed=1)
            single_total += time.perf_counter() - t0
        assert multi_time <= 0.5 * single_total, (
            f"multi {multi_time:.2f}s vs 7x single {single_total:.2f}s"
        )


# -- 10 -----------------------------------------------------------------------


def test_criterion_10_oversampling():
    with criterion(10, "oversampling (ROS counts, SMOTE segments, fold isolation)"):
        from commitcva.baselines import oversample

        rng = np.random.default_rng(10)
        X = np.vstack(
            [rng.normal(size=(50, 4)), rng.normal(size=(12, 4)) + 6.0,
             rng.normal(size=(7, 4)) - 6.0]
        )
        y = np.array([0] * 50 + [1] * 12 + [2] * 7)
        X_val = rng.normal(size=(10, 4))
        X_test = rng.normal(size=(10, 4))
        val_bytes, test_bytes = X_val.tobytes(), X_test.tobytes()

        X_ros, y_ros = oversample(X, y, "ros", rng=rng)
        _, counts = np.unique(y_ros, return_counts=True)
        assert counts.tolist() == [50, 50, 50]

        X_sm, y_sm = oversample(X, y, "smote", smote_k=5, rng=rng)
        _, counts = np.unique(y_sm, return_counts=True)
        assert counts.tolist() == [50, 50, 50]
        for cls in (1, 2):
            originals = X[y == cls]
            synth = X_sm[len(y):][y_sm[len(y):] == cls]
            for row in synth:
                ok = False
                for i in range(len(originals)):
                    for j in range(len(originals)):
                        if i == j:
                            continue
                        a, b = originals[i], originals[j]
                        seg = b - a
                        t = np.dot(row - a, seg) / np.dot(seg, seg)
                        if -1e-12 <= t <= 1 + 1e-12:
                            dist = np.linalg.norm(row - (a + t * seg))
                            if dist < 1e-9:
                                ok = True
                                break
                    if ok:
                        break
                assert ok, "synthetic point off every minority segment"
        assert X_val.tobytes() == val_bytes and X_test.tobytes() == test_bytes


# -- 11 -----------------------------------------------------------------------


def test_criterion_11_evaluate_determinism(tmp_path):
    with criterion(11, "byte-identical evaluate reports"):
        ctx = tmp_path / "ctx.jsonl"
        records = []
        for i in range(24):
            records.append(
                {
                    "commit_hash": f"c{i:03d}",
                    "timestamp": 1000 + i,
                    "pre_hunks": f"alpha{i % 5} ;",
                    "post_hunks": f"beta{i % 4} ;",
                    "pre_ctx": "class A { void m ( ) { } }",
                    "post_ctx": "class B { }",
                    "labels": labels_dict(severity=["Low", "Medium", "High"][i % 3]),
                }
            )
        write_jsonl(ctx, records)
        args = [
            "evaluate", "--corpus", str(ctx), "--seed", "17",
            "--n", "12", "--embed", "4", "--filters", "2", "--gru-hidden", "4",
            "--attn-hidden", "4", "--task-hidden", "4", "--dropout", "0.2",
            "--epochs", "2", "--batch-size", "8", "--vocab-max", "50",
        ]
        out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
        assert cli_main(args + ["--out", str(out1)]) == 0
        assert cli_main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()


# -- 12 -----------------------------------------------------------------------


def _independent_cvss2(metrics: dict) -> float:
    """Second, independently coded v2 base-score calculator (Decimal rounding)."""
    from decimal import Decimal, ROUND_HALF_UP

    weights = {
        "access_vector": {"Local": "0.395", "Adjacent Network": "0.646", "Network": "1.0"},
        "access_complexity": {"High": "0.35", "Medium": "0.61", "Low": "0.71"},
        "authentication": {"Multiple": "0.45", "Single": "0.56", "None": "0.704"},
        "impact": {"None": "0.0", "Partial": "0.275", "Complete": "0.660"},
    }
    c = float(weights["impact"][metrics["confidentiality"]])
    i = float(weights["impact"][metrics["integrity"]])
    a = float(weights["impact"][metrics["availability"]])
    impact = 10.41 * (1 - (1 - c) * (1 - i) * (1 - a))
    exploit = (
        20
        * float(weights["access_vector"][metrics["access_vector"]])
        * float(weights["access_complexity"][metrics["access_complexity"]])
        * float(weights["authentication"][metrics["authentication"]])
    )
    raw = (0.6 * impact + 0.4 * exploit - 1.5) * (1.176 if impact != 0 else 0.0)
    return float(Decimal(repr(raw)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def test_criterion_12_cvss_severity_formula():
    with criterion(12, "CVSS v2 severity formula"):
        from commitcva.cvss2 import base_score, severity_band

        cases = [
            (dict(confidentiality="Complete", integrity="Complete", availability="Complete",
                  access_vector="Network", access_complexity="Low", authentication="None"),
             10.0, "High"),
            (dict(confidentiality="None", integrity="None", availability="None",
                  access_vector="Network", access_complexity="Low", authentication="None"),
             0.0, "Low"),
            (dict(confidentiality="Partial", integrity="None", availability="None",
                  access_vector="Network", access_complexity="Low", authentication="None"),
             5.0, "Medium"),
        ]
        for metrics, want_score, want_band in cases:
            ours = base_score(
                metrics["access_vector"], metrics["access_complexity"],
                metrics["authentication"], metrics["confidentiality"],
                metrics["integrity"], metrics["availability"],
            )
            assert ours == want_score
            assert severity_band(ours) == want_band
            assert _independent_cvss2(metrics) == want_score
        # broader agreement sweep between the two calculators
        import itertools

        for av, ac, au, c, i, a in itertools.product(
            TASK_LABELS["access_vector"], TASK_LABELS["access_complexity"],
            TASK_LABELS["authentication"], TASK_LABELS["confidentiality"],
            TASK_LABELS["integrity"], TASK_LABELS["availability"],
        ):
            metrics = dict(confidentiality=c, integrity=i, availability=a,
                           access_vector=av, access_complexity=ac, authentication=au)
            assert base_score(av, ac, au, c, i, a) == _independent_cvss2(metrics)
