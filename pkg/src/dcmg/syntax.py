"""Lexical layer shared by the netlist and scenario formats."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

SUFFIXES = {"n": 1e-9, "u": 1e-6, "µ": 1e-6, "m": 1e-3, "k": 1e3, "M": 1e6, "G": 1e9}
UNITS = ("Ohm", "ohm", "Ω", "Hz", "Ah", "H", "F", "V", "A", "W", "s")

_NUMBER = re.compile(
    r"^(?P<num>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"(?P<suffix>[numµkMG])?"
    r"(?P<unit>" + "|".join(UNITS) + r")?$"
)


class NetlistError(Exception):
    """Base class for located errors in netlist/scenario text."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None,
                 source: str | None = None):
        self.message = message
        self.line = line
        self.col = col
        self.source = source
        super().__init__(str(self))

    def __str__(self):
        where = []
        if self.source:
            where.append(str(self.source))
        if self.line is not None:
            where.append(str(self.line))
            if self.col is not None:
                where.append(str(self.col))
        return f"{':'.join(where)}: {self.message}" if where else self.message


class ParseError(NetlistError):
    """Malformed text."""


class SemanticError(NetlistError):
    """Well-formed text that describes an invalid network or scenario."""


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[list[Token]]:
    """Split into non-empty statements of whitespace-separated tokens.

    ``#`` starts a comment. Columns are 1-based.
    """
    statements = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        toks = [Token(m.group(0), lineno, m.start() + 1) for m in re.finditer(r"\S+", body)]
        if toks:
            statements.append(toks)
    return statements


def parse_value(tok: Token | str) -> float:
    """Decimal number with optional engineering suffix and unit, e.g. ``100uH``."""
    text = tok.text if isinstance(tok, Token) else tok
    if text.lower() in ("inf", "+inf"):
        return math.inf
    m = _NUMBER.match(text)
    if m is None:
        line, col = (tok.line, tok.col) if isinstance(tok, Token) else (None, None)
        raise ParseError(f"bad numeric value {text!r}", line, col)
    value = float(m.group("num"))
    if m.group("suffix"):
        value *= SUFFIXES[m.group("suffix")]
    return value


def split_kv(tok: Token) -> tuple[str, Token]:
    """Split ``key=value`` into the key and a token pointing at the value."""
    key, sep, value = tok.text.partition("=")
    if not sep or not key or not value:
        raise ParseError(f"expected key=value, got {tok.text!r}", tok.line, tok.col)
    return key, Token(value, tok.line, tok.col + len(key) + 1)


def format_value(x: float) -> str:
    """Round-trippable text for a float."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))
