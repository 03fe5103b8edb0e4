"""Thin subprocess wrapper over the git binary: diffs, blobs and blame."""

from __future__ import annotations

import re
import string
import subprocess
from pathlib import Path

from .types import CommitRecord, FileChange, Hunk

_HEX = set(string.hexdigits)
_EMPTY_TREE = "4b825dc642cb6eb9a060e54bf8d69288fbee4904"  # hash of the empty tree

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


class GitError(RuntimeError):
    pass


def run_git(repo: str | Path, *args: str) -> str:
    cmd = ["git", "-C", str(repo), "-c", "core.quotePath=false", *args]
    proc = subprocess.run(cmd, capture_output=True)
    if proc.returncode != 0:
        raise GitError(
            f"git {' '.join(args[:2])} failed in {repo}: "
            f"{proc.stderr.decode('utf-8', errors='replace').strip()}"
        )
    return proc.stdout.decode("utf-8", errors="replace")


def commit_meta(repo: str | Path, rev: str) -> tuple[str, list[str], int]:
    """Full sha, parent shas and author timestamp for a revision."""
    out = run_git(repo, "show", "-s", "--format=%H%n%P%n%at", rev)
    lines = out.splitlines()
    sha = lines[0].strip()
    parents = lines[1].split() if len(lines) > 1 else []
    ts = int(lines[2].strip()) if len(lines) > 2 and lines[2].strip() else 0
    return sha, parents, ts


def file_at(repo: str | Path, rev: str, path: str) -> str | None:
    """File content at a revision, or None when missing or binary."""
    cmd = ["git", "-C", str(repo), "-c", "core.quotePath=false", "show", f"{rev}:{path}"]
    proc = subprocess.run(cmd, capture_output=True)
    if proc.returncode != 0:
        return None
    if b"\x00" in proc.stdout:
        return None
    return proc.stdout.decode("utf-8", errors="replace")


def _parse_unified_diff(text: str) -> list[FileChange]:
    changes: list[FileChange] = []
    current: FileChange | None = None
    hunk: Hunk | None = None
    pre_no = post_no = 0
    rename_pending = False
    for line in text.splitlines():
        m = _HUNK_RE.match(line)
        if m and current is not None:
            pre_no = int(m.group(1))
            post_no = int(m.group(3))
            hunk = Hunk(pre_start=pre_no)
            current.hunks.append(hunk)
            continue
        if hunk is not None and line[:1] in ("-", "+", " ", "\\"):
            # inside a hunk every line is content (git emits headers only
            # between "diff --git" and the first @@)
            if line.startswith("-"):
                hunk.deleted_lines.append((pre_no, line[1:]))
                pre_no += 1
            elif line.startswith("+"):
                hunk.added_lines.append((post_no, line[1:]))
                post_no += 1
            elif line.startswith(" "):
                pre_no += 1
                post_no += 1
            continue
        if line.startswith("diff --git "):
            current = None
            hunk = None
            rename_pending = False
            continue
        if line.startswith("rename from ") or line.startswith("copy from "):
            rename_pending = True
            continue
        if line.startswith("--- "):
            path = line[4:]
            pre = None if path == "/dev/null" else path[2:]  # strip "a/"
            current = FileChange(path_pre=pre, path_post=None, rename_detected=rename_pending)
            hunk = None
            continue
        if line.startswith("+++ ") and current is not None:
            path = line[4:]
            current.path_post = None if path == "/dev/null" else path[2:]
            changes.append(current)
            continue
    return [fc for fc in changes if fc.hunks]


def commit_changes(repo: str | Path, sha: str) -> list[FileChange]:
    """Per-file hunks of a commit against its first parent (-U0, renames/copies on)."""
    _, parents, _ = commit_meta(repo, sha)
    base = parents[0] if parents else _EMPTY_TREE
    out = run_git(repo, "diff", "-U0", "--find-renames", "--find-copies", base, sha)
    return _parse_unified_diff(out)


def load_commit(repo: str | Path, repo_id: str, rev: str) -> CommitRecord:
    sha, parents, ts = commit_meta(repo, rev)
    return CommitRecord(
        repo_id=repo_id,
        commit_hash=sha,
        parent_hashes=parents,
        author_timestamp=ts,
        files=commit_changes(repo, sha),
    )


def blame_file(repo: str | Path, rev: str, path: str) -> dict[int, tuple[str, str, int]]:
    """Whole-file whitespace-insensitive blame with rename/copy detection.

    Maps each line number at `rev` to (commit sha, path of the file in that
    commit, line number in that commit's version).
    """
    out = run_git(repo, "blame", "--porcelain", "-w", "-M", "-C", rev, "--", path)
    entries: list[tuple[str, int, int]] = []  # (sha, orig_line, final_line)
    sha_filename: dict[str, str] = {}
    current_sha: str | None = None
    for line in out.splitlines():
        if line.startswith("\t"):
            continue
        head = line.split(" ")
        if len(head) >= 3 and len(head[0]) == 40 and all(c in _HEX for c in head[0]):
            if head[1].isdigit() and head[2].isdigit():
                current_sha = head[0]
                entries.append((head[0], int(head[1]), int(head[2])))
                continue
        if current_sha is not None and line.startswith("filename "):
            sha_filename[current_sha] = line[len("filename "):]
    return {
        final: (sha, sha_filename.get(sha, path), orig)
        for sha, orig, final in entries
    }
