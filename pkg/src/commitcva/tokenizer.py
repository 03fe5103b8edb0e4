"""Code-aware tokenization, vocabulary construction and fixed-length encoding."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .ioutil import atomic_write_text
from .types import CvssAssessment, SchemaViolation

PAD_ID = 0
UNK_ID = 1

# Order of the four model inputs, fixed everywhere downstream.
INPUT_SIDES = ("pre_hunks", "post_hunks", "pre_ctx", "post_ctx")

# Longest-match-first lexical grammar: literals stay atomic, multi-character
# operators stay atomic, anything else splits into single characters.
_TOKEN_RE = re.compile(
    r'''
      "(?:\\.|[^"\\])*"                                   # string literal
    | '(?:\\.|[^'\\])*'                                   # char literal
    | [A-Za-z_$][A-Za-z0-9_$]*                            # identifier / keyword
    | 0[xX][0-9a-fA-F_]+[lL]?                             # hex literal
    | 0[bB][01_]+[lL]?                                    # binary literal
    | (?:\d[\d_]*\.?[\d_]*|\.\d[\d_]*)(?:[eE][+-]?\d+)?[fFdDlL]?  # number
    | >>>=|>>>|<<=|>>=|\.\.\.|->|::|\+\+|--|==|!=|<=|>=|&&|\|\|
    | \+=|-=|\*=|/=|%=|&=|\|=|\^=|<<|>>
    | \S                                                  # any other single char
    ''',
    re.VERBOSE,
)


def tokenize(code: str) -> list[str]:
    """Split code into tokens; operators and literals are kept atomic."""
    return _TOKEN_RE.findall(code)


class EmptyCorpusError(ValueError):
    """Raised when a vocabulary is requested over a corpus with no tokens."""


@dataclass
class Vocabulary:
    """Token-to-id map with PAD=0 and UNK=1 reserved; ids are dense."""

    token_to_id: dict[str, int]
    max_size: int = 10000

    @property
    def size(self) -> int:
        return len(self.token_to_id) + 2

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def tokens_in_id_order(self) -> list[str]:
        return sorted(self.token_to_id, key=self.token_to_id.__getitem__)

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Ids back to tokens; PAD dropped, UNK rendered as <unk>."""
        rev = {i: t for t, i in self.token_to_id.items()}
        out = []
        for i in ids:
            if i == PAD_ID:
                continue
            out.append(rev.get(i, "<unk>"))
        return out

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, "".join(t + "\n" for t in self.tokens_in_id_order()))

    @classmethod
    def load(cls, path: str | Path, max_size: int = 10000) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(token_to_id={t: i + 2 for i, t in enumerate(tokens)}, max_size=max_size)


def build_vocab(texts: Iterable[str], max_size: int = 10000) -> Vocabulary:
    """Top max_size tokens by frequency; ties broken lexicographically."""
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(text))
    if not counts:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    return Vocabulary(
        token_to_id={tok: i + 2 for i, (tok, _) in enumerate(ranked)},
        max_size=max_size,
    )


@dataclass
class EncodedCommit:
    """Four fixed-length id sequences plus masks and the commit's labels."""

    commit_id: str
    sides: dict[str, list[int]]
    masks: dict[str, list[bool]]
    labels: CvssAssessment | None = None
    timestamp: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "commit_hash": self.commit_id,
            "timestamp": self.timestamp,
            **{side: list(map(int, ids)) for side, ids in self.sides.items()},
        }
        if self.labels is not None:
            d["labels"] = self.labels.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncodedCommit":
        sides = {}
        for side in INPUT_SIDES:
            if side not in d:
                raise SchemaViolation(f"encoded record missing field: {side}")
            sides[side] = [int(i) for i in d[side]]
        labels = CvssAssessment.from_dict(d["labels"]) if "labels" in d else None
        masks = {side: [i != PAD_ID for i in ids] for side, ids in sides.items()}
        return cls(
            commit_id=str(d.get("commit_hash", "")),
            sides=sides,
            masks=masks,
            labels=labels,
            timestamp=int(d.get("timestamp", 0)),
        )


def encode(
    inputs: dict[str, str],
    vocab: Vocabulary,
    n: int = 1024,
    commit_id: str = "",
    labels: CvssAssessment | None = None,
    timestamp: int = 0,
) -> EncodedCommit:
    """Tokenize, map to ids, truncate to the first n tokens or pad with PAD."""
    sides: dict[str, list[int]] = {}
    masks: dict[str, list[bool]] = {}
    for side in INPUT_SIDES:
        ids = [vocab.id_for(t) for t in tokenize(inputs.get(side, ""))][:n]
        real = len(ids)
        ids.extend([PAD_ID] * (n - real))
        sides[side] = ids
        masks[side] = [True] * real + [False] * (n - real)
    return EncodedCommit(
        commit_id=commit_id,
        sides=sides,
        masks=masks,
        labels=labels,
        timestamp=timestamp,
    )
