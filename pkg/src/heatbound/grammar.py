"""Tiny grammar for profile and rate expressions used by the CLI and tests.

Profile specs are products of primitive factors, optionally with a numeric
coefficient::

    pow(a)          t ** a
    logp(beta,b)    log(b + t) ** beta
    logm(beta,b)    log(b + 1/t) ** beta
    expg(c,gamma)   exp(-c * t ** gamma)
    table(path)     tabulated nodes from a two-column CSV (t, value)

    examples:  pow(-0.5)
               pow(-1)*logp(1,2)
               0.25*pow(-0.5)

Parse failures raise ``ProfileParseError`` carrying the character position.
"""

from __future__ import annotations

import csv
import re

import numpy as np

from .profiles import (
    ExprProfile,
    ExpDecayTerm,
    LogInvTerm,
    LogPlusTerm,
    MonotoneExpr,
    NashRate,
    PowerTerm,
    TabulatedProfile,
)


class ProfileParseError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        self.pos = pos
        super().__init__(f"{message} at position {pos}: {text!r}")


_FACTOR = re.compile(
    r"\s*(?:(?P<num>[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)"
    r"|(?P<name>[a-z]+)\((?P<args>[^)]*)\))\s*"
)


def _parse_args(name: str, raw: str, text: str, pos: int, want: int) -> list[float]:
    parts = [p.strip() for p in raw.split(",")] if raw.strip() else []
    if len(parts) != want:
        raise ProfileParseError(
            f"{name} expects {want} argument(s), got {len(parts)}", text, pos
        )
    out = []
    for p in parts:
        try:
            out.append(float(p))
        except ValueError:
            raise ProfileParseError(f"bad numeric argument {p!r} for {name}", text, pos)
    return out


def _parse_factors(text: str):
    """Split a spec into (coefficient, [terms], table_path_or_None)."""
    coeff = 1.0
    terms = []
    table_path = None
    pos = 0
    first = True
    while pos < len(text):
        if not first:
            if text[pos] != "*":
                raise ProfileParseError("expected '*' between factors", text, pos)
            pos += 1
        m = _FACTOR.match(text, pos)
        if not m:
            raise ProfileParseError("expected a factor", text, pos)
        if m.group("num") is not None:
            coeff *= float(m.group("num"))
        else:
            name, args = m.group("name"), m.group("args")
            if name == "pow":
                (a,) = _parse_args(name, args, text, pos, 1)
                terms.append(PowerTerm(a))
            elif name == "logp":
                beta, b = _parse_args(name, args, text, pos, 2)
                terms.append(LogPlusTerm(beta, b))
            elif name == "logm":
                beta, b = _parse_args(name, args, text, pos, 2)
                terms.append(LogInvTerm(beta, b))
            elif name == "expg":
                c, gamma = _parse_args(name, args, text, pos, 2)
                terms.append(ExpDecayTerm(c, gamma))
            elif name == "table":
                table_path = args.strip()
                if not table_path:
                    raise ProfileParseError("table() needs a file path", text, pos)
            else:
                raise ProfileParseError(f"unknown factor {name!r}", text, pos)
        pos = m.end()
        first = False
    if first:
        raise ProfileParseError("empty specification", text, 0)
    return coeff, terms, table_path


def _load_table(path: str):
    ts, vs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                t, v = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                continue  # header or malformed row
            ts.append(t)
            vs.append(v)
    if len(ts) < 2:
        raise ProfileParseError(f"table {path!r} has fewer than 2 numeric rows", path, 0)
    return np.array(ts), np.array(vs)


def parse_profile(text: str) -> ExprProfile | TabulatedProfile:
    """Parse a decay-profile spec into a ProfileFunction."""
    coeff, terms, table_path = _parse_factors(text)
    if table_path is not None:
        if terms or coeff != 1.0:
            raise ProfileParseError("table() cannot be combined with other factors", text, 0)
        ts, vs = _load_table(table_path)
        return TabulatedProfile(ts, vs)
    return ExprProfile(terms, coeff=coeff)


def parse_rate(text: str) -> NashRate:
    """Parse a rate spec (an increasing expression, or a table) into a NashRate."""
    coeff, terms, table_path = _parse_factors(text)
    if table_path is not None:
        if terms or coeff != 1.0:
            raise ProfileParseError("table() cannot be combined with other factors", text, 0)
        ts, vs = _load_table(table_path)
        return NashRate.from_table(ts, vs)
    return NashRate.from_expression(MonotoneExpr(terms, coeff=coeff))
