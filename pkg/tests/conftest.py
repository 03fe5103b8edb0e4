"""Shared fixtures: git repo builder, gradient-check helpers, synthetic data."""

from __future__ import annotations

import subprocess
from pathlib import Path

import numpy as np
import pytest


class RepoBuilder:
    """Builds tiny git histories with controlled author dates."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._git("init", "-q")
        self._git("config", "user.email", "dev@example.com")
        self._git("config", "user.name", "dev")

    def _git(self, *args: str, env: dict | None = None) -> str:
        import os

        full_env = dict(os.environ)
        if env:
            full_env.update(env)
        proc = subprocess.run(
            ["git", "-C", str(self.path), *args],
            capture_output=True,
            text=True,
            env=full_env,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"git {args} failed: {proc.stderr}")
        return proc.stdout

    def write(self, relpath: str, text: str) -> None:
        p = self.path / relpath
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)

    def move(self, src: str, dst: str) -> None:
        self._git("mv", src, dst)

    def commit(self, message: str, date: str) -> str:
        """date: ISO-8601 like 2020-01-01T00:00:00Z buffers both dates."""
        self._git("add", "-A")
        env = {"GIT_AUTHOR_DATE": date, "GIT_COMMITTER_DATE": date}
        self._git("commit", "-q", "--allow-empty", "-m", message, env=env)
        return self._git("rev-parse", "HEAD").strip()


@pytest.fixture
def repo_builder(tmp_path):
    def make(name: str = "repo") -> RepoBuilder:
        return RepoBuilder(tmp_path / name)

    return make


def labels_dict(**overrides) -> dict:
    base = {
        "confidentiality": "Partial",
        "integrity": "None",
        "availability": "None",
        "access_vector": "Network",
        "access_complexity": "Low",
        "authentication": "None",
        "severity": "Medium",
    }
    base.update(overrides)
    return base


# -- gradient checking ------------------------------------------------------------


def finite_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar-valued f with respect to array x
    (mutated in place and restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * eps)
        it.iternext()
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max over coordinates of |a-b| scaled by max(|a|, |b|, 1)."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_grads(build_loss, tensors: dict[str, "object"], eps: float = 1e-5) -> float:
    """Compare autodiff gradients against finite differences for every tensor.

    build_loss() must rebuild the graph from the tensors' current .data and
    return the scalar loss Tensor. Returns the worst relative error.
    """
    from commitcva import autograd as ag

    loss = build_loss()
    ag.backward(loss)
    worst = 0.0
    for name, t in tensors.items():
        assert t.grad is not None, f"no gradient for {name}"
        ad_grad = t.grad.copy()

        def f(t=t):
            with ag.no_grad():
                return float(build_loss().data)

        fd_grad = finite_diff(f, t.data, eps)
        worst = max(worst, max_rel_err(ad_grad, fd_grad))
        t.grad = None
    return worst
