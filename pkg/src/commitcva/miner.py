"""VFC filtering, cosmetic-change normalization and SZZ tracing of VCCs."""

from __future__ import annotations

import logging
from pathlib import Path

from . import gitio
from .javascopes import effective_line_contents
from .ioutil import read_jsonl
from .types import (
    CommitRecord,
    CvssAssessment,
    FileChange,
    SchemaViolation,
    VccRecord,
    VfcRecord,
    parse_iso8601,
)

log = logging.getLogger(__name__)

MAX_COSMETIC_HOPS = 20


def read_manifest(path: str | Path, repos_dir: str | Path) -> list[VfcRecord]:
    """Load a VFC manifest (JSONL) and materialize each commit from its repo."""
    records = []
    for rec in read_jsonl(path):
        for key in ("repo_id", "commit_hash", "published_date", "labels"):
            if key not in rec:
                raise SchemaViolation(f"manifest record missing field: {key}")
        repo = Path(repos_dir) / rec["repo_id"]
        commit = gitio.load_commit(repo, rec["repo_id"], rec["commit_hash"])
        records.append(
            VfcRecord(
                commit=commit,
                advisory_id=str(rec.get("advisory_id", "")),
                sv_published_date=parse_iso8601(str(rec["published_date"])),
                labels=CvssAssessment.from_dict(rec["labels"]),
            )
        )
    return records


def filter_vfcs(
    candidates: list[VfcRecord], max_files: int = 100, max_lines: int = 10000
) -> list[VfcRecord]:
    """Drop duplicate commits and oversized commits; order preserved."""
    if max_files <= 0 or max_lines <= 0:
        raise ValueError("max_files and max_lines must be positive")
    seen: set[str] = set()
    kept = []
    for rec in candidates:
        sha = rec.commit.commit_hash
        if sha in seen:
            continue
        seen.add(sha)
        if rec.commit.total_files() > max_files:
            continue
        if rec.commit.total_changed_lines() > max_lines:
            continue
        kept.append(rec)
    return kept


def _joined_effective(eff_lines: list[str], numbers: list[int]) -> str | None:
    """Concatenated effective content of the given 1-based lines; None = out of range."""
    parts = []
    for n in numbers:
        if n < 1 or n > len(eff_lines):
            return None
        parts.append(eff_lines[n - 1])
    return "".join(parts)


def normalize_file_change(
    fc: FileChange, pre_source: str | None, post_source: str | None
) -> FileChange:
    """Drop hunks whose sides are identical once comments and whitespace go."""
    needs_pre = any(h.deleted_lines for h in fc.hunks)
    needs_post = any(h.added_lines for h in fc.hunks)
    if (needs_pre and pre_source is None) or (needs_post and post_source is None):
        log.warning(
            "content unavailable for %s; keeping hunks verbatim",
            fc.path_post or fc.path_pre,
        )
        return FileChange(
            path_pre=fc.path_pre,
            path_post=fc.path_post,
            hunks=list(fc.hunks),
            rename_detected=fc.rename_detected,
            unparsable=True,
        )
    eff_pre = effective_line_contents(pre_source) if pre_source is not None else []
    eff_post = effective_line_contents(post_source) if post_source is not None else []
    kept = []
    for hunk in fc.hunks:
        deleted = _joined_effective(eff_pre, [n for n, _ in hunk.deleted_lines])
        added = _joined_effective(eff_post, [n for n, _ in hunk.added_lines])
        if deleted is None or added is None:
            kept.append(hunk)  # line numbers disagree with content; keep conservatively
            continue
        if deleted != added:
            kept.append(hunk)
    return FileChange(
        path_pre=fc.path_pre,
        path_post=fc.path_post,
        hunks=kept,
        rename_detected=fc.rename_detected,
    )


def normalize_changes(
    commit: CommitRecord, repo_path: str | Path | None = None, language: str = "Java"
) -> CommitRecord:
    """Remove whitespace- and comment-only hunks from a commit's file changes."""
    if language.lower() != "java":
        raise ValueError(f"unsupported language: {language}")
    pre_rev = commit.parent_hashes[0] if commit.parent_hashes else None
    files = []
    for fc in commit.files:
        pre_source = post_source = None
        if repo_path is not None:
            if fc.path_pre is not None and pre_rev is not None:
                pre_source = gitio.file_at(repo_path, pre_rev, fc.path_pre)
            if fc.path_post is not None:
                post_source = gitio.file_at(repo_path, commit.commit_hash, fc.path_post)
        norm = normalize_file_change(fc, pre_source, post_source)
        if norm.hunks:
            files.append(norm)
    return CommitRecord(
        repo_id=commit.repo_id,
        commit_hash=commit.commit_hash,
        parent_hashes=list(commit.parent_hashes),
        author_timestamp=commit.author_timestamp,
        files=files,
    )


class _RepoCache:
    """Per-repository caches for blame maps, diffs, file texts and metadata."""

    def __init__(self, repo_path: str | Path):
        self.repo = repo_path
        self.blames: dict[tuple[str, str], dict[int, tuple[str, str, int]] | None] = {}
        self.changes: dict[str, list[FileChange]] = {}
        self.effective: dict[tuple[str, str], list[str] | None] = {}
        self.meta: dict[str, tuple[str, list[str], int]] = {}

    def blame(self, rev: str, path: str) -> dict[int, tuple[str, str, int]] | None:
        key = (rev, path)
        if key not in self.blames:
            try:
                self.blames[key] = gitio.blame_file(self.repo, rev, path)
            except gitio.GitError as exc:
                log.warning("blame failed for %s@%s: %s", path, rev, exc)
                self.blames[key] = None
        return self.blames[key]

    def commit_changes(self, sha: str) -> list[FileChange]:
        if sha not in self.changes:
            self.changes[sha] = gitio.commit_changes(self.repo, sha)
        return self.changes[sha]

    def effective_lines(self, rev: str, path: str) -> list[str] | None:
        key = (rev, path)
        if key not in self.effective:
            text = gitio.file_at(self.repo, rev, path)
            self.effective[key] = None if text is None else effective_line_contents(text)
        return self.effective[key]

    def commit_meta(self, rev: str) -> tuple[str, list[str], int]:
        if rev not in self.meta:
            self.meta[rev] = gitio.commit_meta(self.repo, rev)
        return self.meta[rev]


def _cosmetic_predecessor(
    cache: _RepoCache, sha: str, path: str, line: int
) -> tuple[str, str, int] | None:
    """If `sha`'s change to (path, line) is comment/whitespace-only, give the
    (parent rev, pre path, pre line) to keep blaming from; None otherwise."""
    _, parents, _ = cache.commit_meta(sha)
    if not parents:
        return None
    fc = next((f for f in cache.commit_changes(sha) if f.path_post == path), None)
    if fc is None or fc.path_pre is None:
        return None
    hunk = next((h for h in fc.hunks if any(n == line for n, _ in h.added_lines)), None)
    if hunk is None or not hunk.deleted_lines:
        return None
    eff_post = cache.effective_lines(sha, path)
    eff_pre = cache.effective_lines(parents[0], fc.path_pre)
    if eff_post is None or eff_pre is None or line > len(eff_post):
        return None
    target = eff_post[line - 1]
    if not target:
        return None  # blank/comment-only line; treat the attribution as final
    added_same = [n for n, _ in hunk.added_lines if n <= len(eff_post) and eff_post[n - 1] == target]
    deleted_same = [
        n for n, _ in hunk.deleted_lines if n <= len(eff_pre) and eff_pre[n - 1] == target
    ]
    if line not in added_same or not deleted_same:
        return None
    idx = min(added_same.index(line), len(deleted_same) - 1)
    return parents[0], fc.path_pre, deleted_same[idx]


def _trace_one_line(
    cache: _RepoCache, rev: str, path: str, line: int
) -> tuple[str, int] | None:
    """Last substantive modifier of (path, line) at rev: (sha, author_ts)."""
    for _ in range(MAX_COSMETIC_HOPS):
        blame = cache.blame(rev, path)
        if blame is None or line not in blame:
            return None
        sha, orig_path, orig_line = blame[line]
        step = _cosmetic_predecessor(cache, sha, orig_path, orig_line)
        if step is None:
            _, _, ts = cache.commit_meta(sha)
            return sha, ts
        rev, path, line = step
    _, _, ts = cache.commit_meta(sha)
    return sha, ts


def szz_trace(
    vfc: VfcRecord, repo_path: str | Path, cache: _RepoCache | None = None
) -> list[tuple[CommitRecord, list[tuple[str, int]]]]:
    """Trace each deleted/modified line of the VFC to its last substantive
    modifier; drops candidates dated after the advisory's publication."""
    cache = cache or _RepoCache(repo_path)
    vfc_sha = vfc.commit.commit_hash
    if not vfc.commit.parent_hashes:
        log.info("VFC %s is a root commit; nothing to blame", vfc_sha[:9])
        return []
    base_rev = vfc.commit.parent_hashes[0]
    traced: dict[str, list[tuple[str, int]]] = {}
    for fc in vfc.commit.files:
        if fc.path_pre is None:
            for hunk in fc.hunks:
                for n, _ in hunk.added_lines:
                    log.info("orphan line %s:%d (new file); skipped", fc.path_post, n)
            continue
        pre_len = None
        eff = cache.effective_lines(base_rev, fc.path_pre)
        if eff is not None:
            pre_len = len(eff)
        targets: set[int] = set()
        for hunk in fc.hunks:
            if hunk.deleted_lines:
                targets.update(n for n, _ in hunk.deleted_lines)
            else:
                anchors = [n for n in (hunk.pre_start, hunk.pre_start + 1) if n >= 1]
                if pre_len is not None:
                    anchors = [n for n in anchors if n <= pre_len]
                if not anchors:
                    log.info(
                        "orphan addition at %s:+%d (no context to anchor); skipped",
                        fc.path_pre,
                        hunk.added_lines[0][0] if hunk.added_lines else 0,
                    )
                targets.update(anchors)
        for line in sorted(targets):
            hit = _trace_one_line(cache, base_rev, fc.path_pre, line)
            if hit is None:
                log.info("orphan line %s:%d; skipped", fc.path_pre, line)
                continue
            sha, ts = hit
            if vfc.sv_published_date and ts > vfc.sv_published_date:
                log.info(
                    "candidate %s dated after advisory publication; discarded", sha[:9]
                )
                continue
            traced.setdefault(sha, []).append((fc.path_pre, line))
    results = []
    for sha in traced:
        commit = gitio.load_commit(repo_path, vfc.commit.repo_id, sha)
        results.append((commit, sorted(set(traced[sha]))))
    results.sort(key=lambda pair: (pair[0].author_timestamp, pair[0].commit_hash))
    return results


def dedup_vccs(traced: list[tuple[CommitRecord, CvssAssessment]]) -> list[VccRecord]:
    """One record per (commit, distinct label set); conflicts are flagged."""
    by_hash: dict[str, list[tuple[CommitRecord, CvssAssessment]]] = {}
    order: list[str] = []
    for commit, labels in traced:
        if commit.commit_hash not in by_hash:
            order.append(commit.commit_hash)
        by_hash.setdefault(commit.commit_hash, []).append((commit, labels))
    out: list[VccRecord] = []
    for sha in order:
        entries = by_hash[sha]
        distinct: list[CvssAssessment] = []
        for _, labels in entries:
            if labels not in distinct:
                distinct.append(labels)
        conflict = len(distinct) > 1
        if conflict:
            log.warning("VCC %s traced with %d distinct label sets", sha[:9], len(distinct))
        for labels in distinct:
            out.append(VccRecord(commit=entries[0][0], labels=labels, label_conflict=conflict))
    return out
