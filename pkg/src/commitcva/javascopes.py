"""Java lexing and scope-tree parsing.

Builds a lightweight AST holding only scope-shaped nodes (types, methods and
control statements) with line spans; everything else collapses into its parent.
Also provides the comment-aware helpers used for cosmetic-change detection and
effective-LOC counting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .tokenizer import _TOKEN_RE

log = logging.getLogger(__name__)

# Node kinds that may serve as an enclosing scope for a hunk.
SCOPE_TYPES = frozenset(
    {"class", "interface", "enum_decl", "method", "if_else", "switch", "for_while_do", "try_catch"}
)

_TYPE_KEYWORDS = {"class": "class", "interface": "interface", "enum": "enum_decl"}

# Identifiers that can never be a method name in a type body.
_NON_NAME_KEYWORDS = {
    "if", "else", "for", "while", "do", "switch", "case", "default", "try", "catch",
    "finally", "new", "return", "throw", "assert", "synchronized", "this", "super",
}


class ParseError(Exception):
    """Source could not be parsed into a scope tree."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{message} (line {line}, col {col})")
        self.line = line
        self.col = col


@dataclass
class AstNode:
    """A scope node: its kind, inclusive line span and nested scope children."""

    node_type: str
    start_line: int
    end_line: int
    children: list["AstNode"] = field(default_factory=list)
    effective_loc: int = 0

    def contains(self, start: int, end: int) -> bool:
        return self.start_line <= start and self.end_line >= end

    def walk(self, depth: int = 0):
        yield self, depth
        for child in self.children:
            yield from child.walk(depth + 1)


# --------------------------------------------------------------------------
# Character-level scanning: comment and string-literal state per character.

_CODE, _COMMENT, _STRING = 0, 1, 2


def _char_states(source: str) -> tuple[bytes, bool]:
    """Per-character state flags plus an unterminated-block-comment marker."""
    n = len(source)
    states = bytearray(n)
    i = 0
    unterminated = False
    while i < n:
        c = source[i]
        if c == "/" and i + 1 < n and source[i + 1] == "/":
            j = source.find("\n", i)
            j = n if j < 0 else j
            for k in range(i, j):
                states[k] = _COMMENT
            i = j
        elif c == "/" and i + 1 < n and source[i + 1] == "*":
            j = source.find("*/", i + 2)
            if j < 0:
                unterminated = True
                j = n
            else:
                j += 2
            for k in range(i, j):
                states[k] = _COMMENT
            i = j
        elif c == '"' or c == "'":
            quote = c
            states[i] = _STRING
            i += 1
            while i < n:
                ch = source[i]
                states[i] = _STRING
                if ch == "\\" and i + 1 < n:
                    states[i + 1] = _STRING
                    i += 2
                    continue
                i += 1
                if ch == quote or ch == "\n":
                    break
        else:
            i += 1
    return bytes(states), unterminated


def strip_comments(source: str) -> tuple[str, bool]:
    """Replace comment characters with spaces (newlines kept); flags EOF comments."""
    states, unterminated = _char_states(source)
    out = [
        " " if states[i] == _COMMENT and ch != "\n" else ch
        for i, ch in enumerate(source)
    ]
    return "".join(out), unterminated


def effective_line_contents(source: str) -> list[str]:
    """Per line: non-comment content with all whitespace outside strings removed.

    Blank and comment-only lines come back as empty strings; whitespace inside
    string literals is semantic and kept.
    """
    states, _ = _char_states(source)
    lines: list[str] = []
    buf: list[str] = []
    for i, ch in enumerate(source):
        if ch == "\n":
            lines.append("".join(buf))
            buf = []
            continue
        if states[i] == _COMMENT:
            continue
        if ch.isspace() and states[i] != _STRING:
            continue
        buf.append(ch)
    lines.append("".join(buf))
    return lines


def effective_loc(source_lines_effective: list[str], start_line: int, end_line: int) -> int:
    """Count of non-blank, non-comment lines in the inclusive 1-based span."""
    span = source_lines_effective[start_line - 1 : end_line]
    return max(1, sum(1 for s in span if s))


# --------------------------------------------------------------------------
# Token stream.


@dataclass(frozen=True)
class Token:
    kind: str  # ident | number | string | op
    text: str
    line: int


def lex(source: str) -> list[Token]:
    """Comment-free tokens with 1-based line numbers."""
    stripped, unterminated = strip_comments(source)
    if unterminated:
        log.warning("unterminated block comment; treated as running to end of file")
    tokens: list[Token] = []
    line = 1
    pos = 0
    for m in _TOKEN_RE.finditer(stripped):
        line += stripped.count("\n", pos, m.start())
        pos = m.start()
        text = m.group(0)
        c = text[0]
        if c == '"' or c == "'":
            kind = "string"
        elif c.isalpha() or c == "_" or c == "$":
            kind = "ident"
        elif c.isdigit() or (c == "." and len(text) > 1 and text[1].isdigit()):
            kind = "number"
        else:
            kind = "op"
        tokens.append(Token(kind, text, line))
    return tokens


# --------------------------------------------------------------------------
# Scope parser.


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.n = len(tokens)

    def _err(self, message: str, i: int) -> ParseError:
        line = self.toks[min(i, self.n - 1)].line if self.n else 1
        return ParseError(message, line, 1)

    def _at(self, i: int, text: str) -> bool:
        return i < self.n and self.toks[i].text == text

    def skip_parens(self, i: int) -> int:
        """i points at '('; returns the index just past the matching ')'."""
        depth = 0
        while i < self.n:
            t = self.toks[i].text
            if t == "(":
                depth += 1
            elif t == ")":
                depth -= 1
                if depth == 0:
                    return i + 1
            i += 1
        raise self._err("unbalanced '('", self.n - 1)

    def skip_braces(self, i: int) -> int:
        """i points at '{'; returns the index just past the matching '}'."""
        depth = 0
        while i < self.n:
            t = self.toks[i].text
            if t == "{":
                depth += 1
            elif t == "}":
                depth -= 1
                if depth == 0:
                    return i + 1
            i += 1
        raise self._err("unbalanced '{'", self.n - 1)

    # -- type bodies and the top level ------------------------------------

    def scan_members(
        self, i: int, *, until_rbrace: bool, allow_methods: bool, enum_header: bool = False
    ) -> tuple[list[AstNode], int]:
        """Scan a type body (or the top level) collecting scope nodes.

        Returns the children plus the index of the closing '}' (not consumed)
        or len(tokens) at the top level.
        """
        children: list[AstNode] = []
        member_start = i
        eq_seen = False
        while i < self.n:
            tok = self.toks[i]
            t = tok.text
            if t == "}":
                if until_rbrace:
                    return children, i
                raise self._err("unbalanced '}'", i)
            if tok.kind == "ident" and t in _TYPE_KEYWORDS and not eq_seen:
                node, i = self.type_decl(i, self.toks[member_start].line)
                children.append(node)
                member_start = i
                eq_seen = False
                continue
            if t == ";":
                i += 1
                member_start = i
                eq_seen = False
                enum_header = False
                continue
            if t == "=":
                eq_seen = True
                i += 1
                continue
            if t == "{":
                # initializer block, array initializer or anonymous-class body
                inner, i = self.code_block(i + 1)
                children.extend(inner)
                member_start = i
                continue
            if t == "(":
                if allow_methods and not eq_seen and not enum_header:
                    parsed = self.try_method(i, member_start)
                    if parsed is not None:
                        node, i = parsed
                        children.append(node)
                        member_start = i
                        eq_seen = False
                        continue
                i = self.skip_parens(i)
                continue
            i += 1
        if until_rbrace:
            raise self._err("missing '}' at end of file", self.n - 1)
        return children, i

    def type_decl(self, i: int, start_line: int) -> tuple[AstNode, int]:
        node_type = _TYPE_KEYWORDS[self.toks[i].text]
        j = i + 1
        while j < self.n and self.toks[j].text != "{":
            if self.toks[j].text == "(":
                j = self.skip_parens(j)
            else:
                j += 1
        if j >= self.n:
            raise self._err("type declaration without a body", i)
        children, j_rbrace = self.scan_members(
            j + 1, until_rbrace=True, allow_methods=True, enum_header=(node_type == "enum_decl")
        )
        node = AstNode(node_type, start_line, self.toks[j_rbrace].line, children)
        return node, j_rbrace + 1

    def try_method(self, i_lparen: int, member_start: int) -> tuple[AstNode, int] | None:
        """Method/constructor detection at a '(' inside a type body."""
        if i_lparen == 0:
            return None
        name = self.toks[i_lparen - 1]
        if name.kind != "ident" or name.text in _NON_NAME_KEYWORDS:
            return None
        if i_lparen >= 2 and self.toks[i_lparen - 2].text == "@":
            return None  # annotation usage
        k = self.skip_parens(i_lparen)
        while k < self.n and (
            self.toks[k].kind == "ident" or self.toks[k].text in (",", ".", "[", "]", "<", ">")
        ):
            k += 1
        if k >= self.n:
            return None
        start_line = self.toks[member_start].line
        if self.toks[k].text == "{":
            body, j = self.code_block(k + 1)
            return AstNode("method", start_line, self.toks[j - 1].line, body), j
        if self.toks[k].text == ";":
            return AstNode("method", start_line, self.toks[k].line, []), k + 1
        return None

    # -- statements --------------------------------------------------------

    def code_block(self, i: int) -> tuple[list[AstNode], int]:
        """i is just past '{'; returns children and the index just past '}'."""
        children: list[AstNode] = []
        while i < self.n:
            if self.toks[i].text == "}":
                return children, i + 1
            nodes, i = self.statement(i)
            children.extend(nodes)
        raise self._err("missing '}' at end of file", self.n - 1)

    def statement(self, i: int) -> tuple[list[AstNode], int]:
        tok = self.toks[i]
        t = tok.text
        if tok.kind == "ident":
            if t == "if":
                return self.if_statement(i)
            if t == "switch":
                return self.switch_statement(i)
            if t in ("for", "while"):
                return self.loop_statement(i)
            if t == "do":
                return self.do_statement(i)
            if t == "try":
                return self.try_statement(i)
            if t in _TYPE_KEYWORDS:
                node, i = self.type_decl(i, tok.line)
                return [node], i
        if t == "{":
            return self.code_block(i + 1)
        if t == ";":
            return [], i + 1
        return self.generic_statement(i)

    def if_statement(self, i: int) -> tuple[list[AstNode], int]:
        start = self.toks[i].line
        i += 1
        if not self._at(i, "("):
            raise self._err("expected '(' after 'if'", i)
        i = self.skip_parens(i)
        children, i = self.statement(i)
        if i < self.n and self.toks[i].text == "else":
            more, i = self.statement(i + 1)
            children = children + more
        end = self.toks[i - 1].line
        return [AstNode("if_else", start, end, children)], i

    def switch_statement(self, i: int) -> tuple[list[AstNode], int]:
        start = self.toks[i].line
        i += 1
        if not self._at(i, "("):
            raise self._err("expected '(' after 'switch'", i)
        i = self.skip_parens(i)
        if not self._at(i, "{"):
            raise self._err("expected '{' after switch header", i)
        children, i = self.code_block(i + 1)
        return [AstNode("switch", start, self.toks[i - 1].line, children)], i

    def loop_statement(self, i: int) -> tuple[list[AstNode], int]:
        start = self.toks[i].line
        i += 1
        if not self._at(i, "("):
            raise self._err("expected '(' after loop keyword", i)
        i = self.skip_parens(i)
        children, i = self.statement(i)
        return [AstNode("for_while_do", start, self.toks[i - 1].line, children)], i

    def do_statement(self, i: int) -> tuple[list[AstNode], int]:
        start = self.toks[i].line
        children, i = self.statement(i + 1)
        if not (i < self.n and self.toks[i].text == "while"):
            raise self._err("expected 'while' after 'do' body", i)
        i += 1
        if not self._at(i, "("):
            raise self._err("expected '(' after 'while'", i)
        i = self.skip_parens(i)
        if self._at(i, ";"):
            i += 1
        return [AstNode("for_while_do", start, self.toks[i - 1].line, children)], i

    def try_statement(self, i: int) -> tuple[list[AstNode], int]:
        start = self.toks[i].line
        i += 1
        if self._at(i, "("):  # try-with-resources
            i = self.skip_parens(i)
        if not self._at(i, "{"):
            raise self._err("expected '{' after 'try'", i)
        children, i = self.code_block(i + 1)
        while i < self.n and self.toks[i].text == "catch":
            i += 1
            if not self._at(i, "("):
                raise self._err("expected '(' after 'catch'", i)
            i = self.skip_parens(i)
            if not self._at(i, "{"):
                raise self._err("expected '{' after catch header", i)
            more, i = self.code_block(i + 1)
            children.extend(more)
        if i < self.n and self.toks[i].text == "finally":
            i += 1
            if not self._at(i, "{"):
                raise self._err("expected '{' after 'finally'", i)
            more, i = self.code_block(i + 1)
            children.extend(more)
        return [AstNode("try_catch", start, self.toks[i - 1].line, children)], i

    def generic_statement(self, i: int) -> tuple[list[AstNode], int]:
        """Consume an expression/declaration statement; ends at ';' or ':' at
        paren depth 0, or at an enclosing '}' (not consumed)."""
        children: list[AstNode] = []
        depth = 0
        while i < self.n:
            t = self.toks[i].text
            if t == "(":
                depth += 1
            elif t == ")":
                if depth == 0:
                    raise self._err("unbalanced ')'", i)
                depth -= 1
            elif t == "{":
                if depth == 0:
                    inner, i = self.code_block(i + 1)
                    children.extend(inner)
                    if i < self.n and self.toks[i].text == ";":
                        return children, i + 1
                    if i < self.n and self.toks[i].text in (".", ",", ")", "["):
                        continue  # block used as an expression; keep consuming
                    return children, i
                i = self.skip_braces(i)
                continue
            elif (t == ";" or t == ":") and depth == 0:
                return children, i + 1
            elif t == "}" and depth == 0:
                return children, i  # let the enclosing block close
            i += 1
        return children, i


def parse_ast(source: str, language: str = "java") -> AstNode:
    """Parse source into a scope tree; the root node spans the whole file."""
    if language.lower() != "java":
        raise ValueError(f"unsupported language: {language}")
    if not source.strip():
        raise ParseError("empty source", 1, 1)
    tokens = lex(source)
    parser = _Parser(tokens)
    children, _ = parser.scan_members(0, until_rbrace=False, allow_methods=False)
    n_lines = source.count("\n") + 1
    root = AstNode("other", 1, n_lines, children)
    eff = effective_line_contents(source)
    for node, _depth in root.walk():
        node.effective_loc = effective_loc(eff, node.start_line, min(node.end_line, len(eff)))
    return root
