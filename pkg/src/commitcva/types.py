"""Domain types shared across the mining, context and modelling stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone


class SchemaViolation(ValueError):
    """A record is missing a required field or holds an illegal value."""


# Task order and legal label sets, fixed across the whole pipeline.
TASK_LABELS: dict[str, list[str]] = {
    "confidentiality": ["None", "Partial", "Complete"],
    "integrity": ["None", "Partial", "Complete"],
    "availability": ["None", "Partial", "Complete"],
    "access_vector": ["Local", "Adjacent Network", "Network"],
    "access_complexity": ["Low", "Medium", "High"],
    "authentication": ["None", "Single", "Multiple"],
    "severity": ["Low", "Medium", "High"],
}

TASKS: list[str] = list(TASK_LABELS)


@dataclass(frozen=True)
class CvssAssessment:
    """The seven CVSS v2 base-metric labels attached to a commit."""

    confidentiality: str
    integrity: str
    availability: str
    access_vector: str
    access_complexity: str
    authentication: str
    severity: str

    def __post_init__(self) -> None:
        for task in TASKS:
            value = getattr(self, task)
            if value not in TASK_LABELS[task]:
                raise SchemaViolation(
                    f"illegal value {value!r} for {task}; expected one of {TASK_LABELS[task]}"
                )

    def as_dict(self) -> dict[str, str]:
        return {task: getattr(self, task) for task in TASKS}

    @classmethod
    def from_dict(cls, d: dict) -> "CvssAssessment":
        missing = [t for t in TASKS if t not in d]
        if missing:
            raise SchemaViolation(f"labels object missing field(s): {', '.join(missing)}")
        return cls(**{t: d[t] for t in TASKS})


@dataclass
class Hunk:
    """One contiguous diff block: deleted pre-image lines and added post-image lines.

    pre_start records the pre-image line the hunk applies at (for pure
    additions: the line after which text was inserted); SZZ anchoring needs it.
    """

    deleted_lines: list[tuple[int, str]] = field(default_factory=list)
    added_lines: list[tuple[int, str]] = field(default_factory=list)
    pre_start: int = 0

    def changed_line_count(self) -> int:
        return len(self.deleted_lines) + len(self.added_lines)

    def as_dict(self) -> dict:
        return {
            "del": [[n, t] for n, t in self.deleted_lines],
            "add": [[n, t] for n, t in self.added_lines],
            "pre_start": self.pre_start,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hunk":
        deleted = [(int(n), str(t)) for n, t in d.get("del", [])]
        return cls(
            deleted_lines=deleted,
            added_lines=[(int(n), str(t)) for n, t in d.get("add", [])],
            pre_start=int(d.get("pre_start", deleted[0][0] if deleted else 0)),
        )


@dataclass
class FileChange:
    """Per-file diff of a commit; either path may be absent for adds/deletes."""

    path_pre: str | None
    path_post: str | None
    hunks: list[Hunk] = field(default_factory=list)
    rename_detected: bool = False
    unparsable: bool = False  # content unavailable; normalization kept hunks verbatim

    def as_dict(self) -> dict:
        return {
            "path_pre": self.path_pre,
            "path_post": self.path_post,
            "hunks": [h.as_dict() for h in self.hunks],
            "rename_detected": self.rename_detected,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FileChange":
        return cls(
            path_pre=d.get("path_pre"),
            path_post=d.get("path_post"),
            hunks=[Hunk.from_dict(h) for h in d.get("hunks", [])],
            rename_detected=bool(d.get("rename_detected", False)),
        )


@dataclass
class CommitRecord:
    """A mined commit: identity, parents, author time and per-file hunks."""

    repo_id: str
    commit_hash: str
    parent_hashes: list[str]
    author_timestamp: int
    files: list[FileChange] = field(default_factory=list)

    def total_files(self) -> int:
        return len(self.files)

    def total_changed_lines(self) -> int:
        return sum(h.changed_line_count() for fc in self.files for h in fc.hunks)

    def as_dict(self) -> dict:
        return {
            "repo_id": self.repo_id,
            "commit_hash": self.commit_hash,
            "parent_hashes": list(self.parent_hashes),
            "timestamp": self.author_timestamp,
            "files": [fc.as_dict() for fc in self.files],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CommitRecord":
        for key in ("repo_id", "commit_hash", "timestamp"):
            if key not in d:
                raise SchemaViolation(f"commit record missing field: {key}")
        return cls(
            repo_id=d["repo_id"],
            commit_hash=d["commit_hash"],
            parent_hashes=list(d.get("parent_hashes", [])),
            author_timestamp=int(d["timestamp"]),
            files=[FileChange.from_dict(fc) for fc in d.get("files", [])],
        )


@dataclass
class VfcRecord:
    """A vulnerability-fixing commit plus the advisory metadata used for tracing."""

    commit: CommitRecord
    advisory_id: str
    sv_published_date: int
    labels: CvssAssessment

    def as_dict(self) -> dict:
        d = self.commit.as_dict()
        d["advisory_id"] = self.advisory_id
        d["published_date"] = self.sv_published_date
        d["labels"] = self.labels.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VfcRecord":
        if "labels" not in d:
            raise SchemaViolation("VFC record missing field: labels")
        return cls(
            commit=CommitRecord.from_dict(d),
            advisory_id=str(d.get("advisory_id", "")),
            sv_published_date=int(d.get("published_date", 0)),
            labels=CvssAssessment.from_dict(d["labels"]),
        )


@dataclass
class VccRecord:
    """A traced vulnerability-contributing commit with its inherited labels."""

    commit: CommitRecord
    labels: CvssAssessment
    label_conflict: bool = False

    def as_dict(self) -> dict:
        d = self.commit.as_dict()
        d["labels"] = self.labels.as_dict()
        d["label_conflict"] = self.label_conflict
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VccRecord":
        if "labels" not in d:
            raise SchemaViolation("VCC record missing field: labels")
        return cls(
            commit=CommitRecord.from_dict(d),
            labels=CvssAssessment.from_dict(d["labels"]),
            label_conflict=bool(d.get("label_conflict", False)),
        )


def parse_iso8601(text: str) -> int:
    """ISO-8601 date or datetime -> UTC epoch seconds (date-only means midnight UTC)."""
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise SchemaViolation(f"bad ISO-8601 date: {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())
