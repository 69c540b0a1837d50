"""Check results and deterministic report serialization.

Every numeric artifact (JSON report, CSV data file, text table) must be a
pure function of the run configuration, so all floats are written with 17
significant digits (doubles round-trip exactly) and JSON keys are sorted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np


def format_float(x: float) -> str:
    """17-significant-digit decimal form; round-trips any finite double."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_scalar(x: Any) -> str:
    if x is None:
        return "null"
    if isinstance(x, bool) or isinstance(x, np.bool_):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isfinite(x):
            return format_float(x)
        return '"%s"' % format_float(x)
    if isinstance(x, str):
        out = x.replace("\\", "\\\\").replace('"', '\\"')
        out = out.replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t")
        return '"%s"' % out
    raise TypeError(f"cannot serialize {type(x)!r}")


def json_dumps(obj: Any, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, fixed float format, 2-space indent."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for key in sorted(obj):
            if not isinstance(key, str):
                raise TypeError("JSON object keys must be strings")
            items.append(f"{inner}{_json_scalar(key)}: {json_dumps(obj[key], indent + 1)}")
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{inner}{json_dumps(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    return _json_scalar(obj)


def csv_text(header: Iterable[str], rows: Iterable[Iterable[Any]]) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                cells.append(format_float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


@dataclass
class CheckResult:
    """Outcome of one numerical check.

    ``worst_margin`` is the raw margin (bound minus observed quantity) at the
    binding point; ``slack_used`` is the statistical+absolute slack at that
    same point, so ``passed == (worst_margin >= -slack_used)`` for one-sided
    checks. ``location`` names where the binding point sits (a lambda, a t,
    a pair, or a policy).
    """

    name: str
    passed: bool
    worst_margin: float
    location: Any
    slack_used: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_margin": float(self.worst_margin),
            "location": self.location,
            "slack_used": float(self.slack_used),
            "details": self.details,
        }


def worst_point(margins: np.ndarray, slacks: np.ndarray) -> int:
    """Index of the binding point: minimal slacked margin."""
    margins = np.asarray(margins, dtype=float)
    slacks = np.asarray(slacks, dtype=float)
    return int(np.argmin(margins + slacks))


def make_check(name: str, margins, slacks, locations, details: dict | None = None) -> CheckResult:
    """Assemble a one-sided check from per-point margins and slacks."""
    margins = np.asarray(margins, dtype=float)
    slacks = np.asarray(slacks, dtype=float)
    i = worst_point(margins, slacks)
    passed = bool(np.all(margins + slacks >= 0.0))
    loc = locations[i]
    if isinstance(loc, (np.floating, np.integer)):
        loc = float(loc)
    return CheckResult(
        name=name,
        passed=passed,
        worst_margin=float(margins[i]),
        location=loc,
        slack_used=float(slacks[i]),
        details=details or {},
    )


@dataclass
class AuditReport:
    checks: list[CheckResult]
    metadata: dict
    #: non-serialized side products (curves etc.) for the harness to export
    artifacts: dict = field(default_factory=dict, repr=False)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "checks": [c.to_dict() for c in self.checks],
            "all_passed": self.all_passed,
        }


def render_table(checks: list[CheckResult]) -> str:
    """Aligned text table: name, pass, worst margin, location, slack."""
    header = ("check", "pass", "worst_margin", "location", "slack")
    rows = [header]
    for c in checks:
        loc = c.location
        if isinstance(loc, float):
            loc = "%.6g" % loc
        rows.append((c.name, "PASS" if c.passed else "FAIL",
                     "%.6g" % c.worst_margin, str(loc), "%.3g" % c.slack_used))
    widths = [max(len(r[j]) for r in rows) for j in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
