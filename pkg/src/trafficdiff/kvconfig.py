"""Tiny text config format: nested key/value messages.

A message is a sequence of fields. A field is either a scalar
(``name: value``) or a nested message (``name { ... }``, with an optional
colon before the brace). Scalars are numbers, double-quoted strings, or bare
identifiers (enum symbols, ``true``/``false``). ``#`` starts a comment that
runs to the end of the line. Repeating a field name collects values in
order.

parse_text returns ``{name: [value, ...]}`` with nested messages as dicts of
the same shape. format_text writes the canonical form back out; the two
functions round trip.
"""
from __future__ import annotations

import re


class EnumSymbol(str):
    """A bare identifier; formats without quotes."""

    __slots__ = ()


class ParseError(ValueError):
    pass


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<brace>[{}])
  | (?P<colon>:)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<number>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
    """,
    re.VERBOSE,
)


def _tokenize(text):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"bad character {text[pos]!r} at offset {pos}")
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        out.append((kind, m.group()))
    return out


def _parse_number(tok: str):
    if re.fullmatch(r"[-+]?\d+", tok):
        return int(tok)
    return float(tok)


def _unquote(tok: str) -> str:
    body = tok[1:-1]
    return body.replace('\\"', '"').replace("\\\\", "\\")


def parse_text(text: str) -> dict:
    tokens = _tokenize(text)
    msg, idx = _parse_message(tokens, 0, top=True)
    if idx != len(tokens):
        raise ParseError(f"trailing tokens starting with {tokens[idx][1]!r}")
    return msg


def _parse_message(tokens, idx, top=False):
    msg: dict = {}
    while idx < len(tokens):
        kind, tok = tokens[idx]
        if kind == "brace" and tok == "}":
            if top:
                raise ParseError("unmatched '}'")
            return msg, idx + 1
        if kind != "ident":
            raise ParseError(f"expected field name, got {tok!r}")
        name = tok
        idx += 1
        if idx >= len(tokens):
            raise ParseError(f"dangling field {name!r}")
        kind, tok = tokens[idx]
        if kind == "colon":
            idx += 1
            if idx >= len(tokens):
                raise ParseError(f"missing value for {name!r}")
            kind, tok = tokens[idx]
            if kind == "brace" and tok == "{":
                value, idx = _parse_message(tokens, idx + 1)
            elif kind == "number":
                value, idx = _parse_number(tok), idx + 1
            elif kind == "string":
                value, idx = _unquote(tok), idx + 1
            elif kind == "ident":
                value, idx = EnumSymbol(tok), idx + 1
            else:
                raise ParseError(f"bad value {tok!r} for field {name!r}")
        elif kind == "brace" and tok == "{":
            value, idx = _parse_message(tokens, idx + 1)
        else:
            raise ParseError(f"expected ':' or '{{' after {name!r}, got {tok!r}")
        msg.setdefault(name, []).append(value)
    if not top:
        raise ParseError("unterminated message, missing '}'")
    return msg, idx


def _format_value(value) -> str:
    if isinstance(value, EnumSymbol):
        return str(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    raise TypeError(f"cannot format {type(value).__name__}")


def format_text(msg: dict, indent: int = 0) -> str:
    pad = "  " * indent
    lines = []
    for name, values in msg.items():
        for value in values:
            if isinstance(value, dict):
                lines.append(f"{pad}{name} {{")
                lines.append(format_text(value, indent + 1).rstrip("\n"))
                lines.append(f"{pad}}}")
            else:
                lines.append(f"{pad}{name}: {_format_value(value)}")
    return "\n".join(line for line in lines if line != "") + "\n"


def first(msg: dict, name: str, default=None):
    """Scalar accessor: the first value of a possibly-repeated field."""
    if name in msg and msg[name]:
        return msg[name][0]
    return default


def all_of(msg: dict, name: str) -> list:
    return list(msg.get(name, []))
