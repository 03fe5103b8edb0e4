"""Closest-enclosing-scope extraction and model-input preprocessing."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import javascopes
from .javascopes import AstNode, ParseError, SCOPE_TYPES
from .tokenizer import tokenize
from .types import CommitRecord

log = logging.getLogger(__name__)

FALLBACK_WINDOW = 10  # lines either side of a hunk when a file cannot be parsed


@dataclass
class EnclosingScope:
    """The smallest scope whose span contains a hunk."""

    file_path: str
    hunk_ref: int
    node_type: str
    start_line: int
    end_line: int
    source_text: str
    effective_loc: int
    fallback: bool = False


def preprocess_code(source: str) -> str:
    """Drop comments, keep punctuation and case, collapse whitespace to single
    separators between tokens."""
    stripped, unterminated = javascopes.strip_comments(source)
    if unterminated:
        log.warning("unterminated comment removed to end of file")
    return " ".join(tokenize(stripped))


def extract_ces(
    ast: AstNode,
    hunk_span: tuple[int, int],
    source: str = "",
    file_path: str = "",
    hunk_ref: int = 0,
) -> EnclosingScope:
    """Pick the scope containing the hunk with the fewest effective LOC.

    Candidates are every scope-typed node whose span contains the hunk, plus
    the root (always valid). Ties on effective LOC go to the deepest node.
    """
    start, end = hunk_span
    best: AstNode | None = None
    best_key: tuple[int, int] | None = None
    for node, depth in ast.walk():
        is_candidate = depth == 0 or node.node_type in SCOPE_TYPES
        if not is_candidate or not node.contains(start, end):
            continue
        key = (node.effective_loc, -depth)
        if best_key is None or key < best_key:
            best, best_key = node, key
    assert best is not None  # the root always qualifies
    lines = source.split("\n") if source else []
    text = "\n".join(lines[best.start_line - 1 : best.end_line]) if lines else ""
    return EnclosingScope(
        file_path=file_path,
        hunk_ref=hunk_ref,
        node_type=best.node_type,
        start_line=best.start_line,
        end_line=best.end_line,
        source_text=text,
        effective_loc=best.effective_loc,
    )


def fallback_scope(
    source: str, hunk_span: tuple[int, int], file_path: str = "", hunk_ref: int = 0
) -> EnclosingScope:
    """Fixed-size window around the hunk, used when the file cannot be parsed."""
    lines = source.split("\n")
    start = max(1, hunk_span[0] - FALLBACK_WINDOW)
    end = min(len(lines), hunk_span[1] + FALLBACK_WINDOW)
    end = max(end, start)
    text = "\n".join(lines[start - 1 : end])
    eff = javascopes.effective_line_contents(source)
    return EnclosingScope(
        file_path=file_path,
        hunk_ref=hunk_ref,
        node_type="other",
        start_line=start,
        end_line=end,
        source_text=text,
        effective_loc=javascopes.effective_loc(eff, start, min(end, len(eff))),
        fallback=True,
    )


def _scope_for(
    source: str | None,
    span: tuple[int, int],
    path: str,
    hunk_ref: int,
    ast_cache: dict[str, AstNode | None],
) -> EnclosingScope | None:
    if source is None:
        return None
    if path not in ast_cache:
        try:
            ast_cache[path] = javascopes.parse_ast(source)
        except ParseError as exc:
            log.warning("parse failed for %s: %s; using fallback window", path, exc)
            ast_cache[path] = None
    ast = ast_cache[path]
    if ast is None:
        return fallback_scope(source, span, path, hunk_ref)
    span = (max(1, span[0]), min(ast.end_line, span[1]))
    return extract_ces(ast, span, source, path, hunk_ref)


def build_inputs(
    commit: CommitRecord,
    pre_sources: dict[str, str | None],
    post_sources: dict[str, str | None],
) -> dict[str, str]:
    """Assemble the four preprocessed model inputs for one commit.

    Hunks and scopes concatenate in commit file order, then hunk order; the
    deleted side draws context from pre-change files, the added side from
    post-change files.
    """
    pre_hunk_parts: list[str] = []
    post_hunk_parts: list[str] = []
    pre_ctx_parts: list[str] = []
    post_ctx_parts: list[str] = []
    pre_asts: dict[str, AstNode | None] = {}
    post_asts: dict[str, AstNode | None] = {}
    hunk_ref = 0
    for fc in commit.files:
        for hunk in fc.hunks:
            if hunk.deleted_lines:
                pre_hunk_parts.append("\n".join(t for _, t in hunk.deleted_lines))
                span = (hunk.deleted_lines[0][0], hunk.deleted_lines[-1][0])
                if fc.path_pre is not None:
                    scope = _scope_for(
                        pre_sources.get(fc.path_pre), span, fc.path_pre, hunk_ref, pre_asts
                    )
                    if scope is not None:
                        pre_ctx_parts.append(scope.source_text)
            if hunk.added_lines:
                post_hunk_parts.append("\n".join(t for _, t in hunk.added_lines))
                span = (hunk.added_lines[0][0], hunk.added_lines[-1][0])
                if fc.path_post is not None:
                    scope = _scope_for(
                        post_sources.get(fc.path_post), span, fc.path_post, hunk_ref, post_asts
                    )
                    if scope is not None:
                        post_ctx_parts.append(scope.source_text)
            hunk_ref += 1
    return {
        "pre_hunks": preprocess_code("\n".join(pre_hunk_parts)),
        "post_hunks": preprocess_code("\n".join(post_hunk_parts)),
        "pre_ctx": preprocess_code("\n".join(pre_ctx_parts)),
        "post_ctx": preprocess_code("\n".join(post_ctx_parts)),
    }
