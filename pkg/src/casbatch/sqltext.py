"""Lossless SQL text tokenizer.

Recognizes just enough lexical structure (strings, quoted identifiers,
comments) for safe textual rewriting without a dialect-complete parser.
Token texts concatenate back to the original input byte-for-byte.
"""

from __future__ import annotations

import re
from typing import Iterator, NamedTuple


class Token(NamedTuple):
    kind: str   # ws | comment | string | qident | number | ident | op
    text: str
    pos: int

    @property
    def end(self) -> int:
        return self.pos + len(self.text)


_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+)
    | (?P<comment>--[^\n]*|\#[^\n]*|/\*.*?\*/)
    | (?P<string>'(?:[^']|'')*')
    | (?P<qident>"(?:[^"]|"")*"|\[[^\]]*\]|`(?:[^`]|``)*`)
    | (?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
    | (?P<ident>[A-Za-z_][A-Za-z0-9_$]*)
    | (?P<op>.)
    """,
    re.VERBOSE | re.DOTALL,
)

# Unterminated string / comment / quoted identifier: consume to end of input
# rather than letting the quote char fall through as an operator.
_UNTERMINATED = (("'", "string"), ('"', "qident"), ("[", "qident"), ("`", "qident"), ("/*", "comment"))


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    n = len(sql)
    while pos < n:
        m = _TOKEN_RE.match(sql, pos)
        assert m is not None  # the op branch matches any character
        kind = m.lastgroup or "op"
        text = m.group()
        if kind == "op":
            for prefix, open_kind in _UNTERMINATED:
                if sql.startswith(prefix, pos):
                    tokens.append(Token(open_kind, sql[pos:], pos))
                    return tokens
        tokens.append(Token(kind, text, pos))
        pos = m.end()
    return tokens


def significant(tokens: list[Token]) -> Iterator[tuple[int, Token]]:
    """Index/token pairs, skipping whitespace and comments."""
    for i, tok in enumerate(tokens):
        if tok.kind not in ("ws", "comment"):
            yield i, tok


def ident_value(tok: Token) -> str | None:
    """Identifier's effective name, unquoting as needed; None for non-identifiers."""
    if tok.kind == "ident":
        return tok.text
    if tok.kind == "qident":
        t = tok.text
        if t.startswith('"'):
            return t[1:-1].replace('""', '"') if t.endswith('"') else t[1:]
        if t.startswith("["):
            return t[1:-1] if t.endswith("]") else t[1:]
        if t.startswith("`"):
            return t[1:-1].replace("``", "`") if t.endswith("`") else t[1:]
    return None


_PLAIN_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def quote_ident(name: str) -> str:
    """Quote an identifier for the engine unless it is already plain."""
    if _PLAIN_IDENT_RE.match(name):
        return name
    return '"' + name.replace('"', '""') + '"'


def is_plain_ident(name: str) -> bool:
    return bool(_PLAIN_IDENT_RE.match(name))


def next_significant(tokens: list[Token], i: int) -> int | None:
    """Index of the next non-ws, non-comment token after position i."""
    for j in range(i + 1, len(tokens)):
        if tokens[j].kind not in ("ws", "comment"):
            return j
    return None


def prev_significant(tokens: list[Token], i: int) -> int | None:
    for j in range(i - 1, -1, -1):
        if tokens[j].kind not in ("ws", "comment"):
            return j
    return None
