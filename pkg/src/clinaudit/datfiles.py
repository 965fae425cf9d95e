"""Whitespace-delimited plot data files.

Every file is a single header line followed by one row per record, fields
separated by one space, LF line endings, trailing newline.  Percentages are
written with two decimals, PSI with six.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping, Sequence


def render(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    lines = [" ".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row {row!r} does not match header {header!r}")
        lines.append(" ".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def write(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def pct(x: float) -> str:
    return f"{100.0 * float(x):.2f}"


def section_pct(per_section: Mapping[str, float]) -> str:
    """Completeness bar data: ``section pct`` (section ids shortened to their first word)."""
    return render(("section", "pct"), ((s.split("_")[0], pct(v)) for s, v in per_section.items()))


def doc_drift(rows) -> str:
    """Completeness drift trace: ``ver overall <group>...`` with ver numbered from 1."""
    rows = list(rows)
    groups = list(rows[0].groups) if rows else ["privacy", "splits"]
    body = ([i, pct(r.overall)] + [pct(r.groups[g]) for g in groups] for i, r in enumerate(rows, start=1))
    return render(["ver", "overall", *groups], body)


def threshold_pct(points: Iterable[tuple[float, float]]) -> str:
    """Leakage curve: ``threshold pct``."""
    return render(("threshold", "pct"), ((f"{t:.2f}", pct(v)) for t, v in points))


def risk_count(histogram: Sequence[int]) -> str:
    """PHI risk histogram: ``risk count`` for risk levels 0..8."""
    return render(("risk", "count"), ((r, int(c)) for r, c in enumerate(histogram)))


def field_pct(rates: Mapping[str, float]) -> str:
    """Missingness bars: ``field pct``."""
    return render(("field", "pct"), ((f, pct(v)) for f, v in rates.items()))


def year_psi(points: Iterable[tuple[object, float]]) -> str:
    """Drift trace: ``year psi``."""
    return render(("year", "psi"), ((p, f"{v:.6f}") for p, v in points))


def bin_mid_count(mids: Sequence[object], counts: Sequence[int]) -> str:
    """Length histogram: ``bin_mid count``."""
    return render(("bin_mid", "count"), zip(mids, (int(c) for c in counts)))
