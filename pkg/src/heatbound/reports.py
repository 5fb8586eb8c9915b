"""Deterministic report serialization.

Reports are plain dicts.  Canonical form: keys sorted, floats printed with
17 significant digits, no whitespace variation.  The report hash is the
sha256 of the canonical form with the ``timestamp`` and ``hash`` fields
removed, so two runs with identical inputs and seed hash identically even
though their wall-clock stamps differ.

CSV schemas are fixed:

    envelope runs:  t,x,y,exact,bound,log_margin
    profile runs:   r,phi,theta,theta_tilde
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from datetime import datetime, timezone

__all__ = [
    "SCHEMA_VERSION", "ENVELOPE_COLUMNS", "PROFILE_COLUMNS",
    "canonical_json", "report_hash", "make_report", "write_report",
    "envelope_csv", "profile_csv", "read_report", "check_report_hash",
]

SCHEMA_VERSION = 1

ENVELOPE_COLUMNS = ("t", "x", "y", "exact", "bound", "log_margin")
PROFILE_COLUMNS = ("r", "phi", "theta", "theta_tilde")


def _canon(obj, out: list) -> None:
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=True))
    elif isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(repr(obj))
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            # JSON has no inf/nan token; a report containing one is a bug
            raise ValueError(f"non-finite float {obj!r} in report")
        out.append(format(obj, ".17g"))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"report keys must be strings, got {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _canon(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _canon(item, out)
        out.append("]")
    elif hasattr(obj, "item") and callable(obj.item):
        # numpy scalar
        _canon(obj.item(), out)
    elif hasattr(obj, "tolist") and callable(obj.tolist):
        _canon(obj.tolist(), out)
    else:
        raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Canonical JSON text: sorted keys, 17-significant-digit floats."""
    out: list = []
    _canon(obj, out)
    return "".join(out)


UNHASHED_FIELDS = ("timestamp", "hash", "emission")


def report_hash(report: dict) -> str:
    """sha256 of the canonical report.

    The wall-clock stamp, the hash field itself, and the emission
    destination are excluded: they are not inputs to the computation, so
    two runs with the same inputs and seed hash identically.
    """
    body = {k: v for k, v in report.items() if k not in UNHASHED_FIELDS}
    return hashlib.sha256(canonical_json(body).encode("ascii")).hexdigest()


def make_report(command: str, config: dict, seed: int, constants: dict,
                results: dict, version: str, emission: dict | None = None) -> dict:
    """Assemble a report dict with the determinism fields filled in.

    ``seed`` is a separate mandatory argument so no emission path can
    forget it; ``constants`` holds every numerical constant the run used,
    keyed by the operation that produced it.  ``emission`` (output path,
    format) is recorded but excluded from the hash.
    """
    report = {
        "schema_version": SCHEMA_VERSION,
        "library_version": version,
        "command": command,
        "config": config,
        "seed": int(seed),
        "constants": constants,
        "results": results,
        "emission": emission or {},
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    report["hash"] = report_hash(report)
    return report


def write_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(canonical_json(report))
        fh.write("\n")


def read_report(path: str) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def check_report_hash(report: dict) -> bool:
    return report.get("hash") == report_hash(report)


def _csv_text(columns, rows) -> str:
    rows = list(rows)
    if not rows:
        raise ValueError("refusing to emit an empty table")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row of width {len(row)}, expected {len(columns)}")
        w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def envelope_csv(rows) -> str:
    """CSV text for off-diagonal comparisons: t,x,y,exact,bound,log_margin."""
    return _csv_text(ENVELOPE_COLUMNS, rows)


def profile_csv(rows) -> str:
    """CSV text for profile tabulations: r,phi,theta,theta_tilde."""
    return _csv_text(PROFILE_COLUMNS, rows)
