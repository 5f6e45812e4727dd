"""Correlation metrics and result tables."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedCorrelationError


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson's r in float64. Zero variance on either side raises."""
    if len(x) != len(y):
        raise ValueError(f"pearson: length mismatch ({len(x)} vs {len(y)})")
    if len(x) < 2:
        raise UndefinedCorrelationError("pearson: need at least two points")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("pearson: zero variance input")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson over average ranks."""
    if len(x) != len(y):
        raise ValueError(f"spearman: length mismatch ({len(x)} vs {len(y)})")
    return pearson(rankdata(x), rankdata(y))


@dataclass
class ReportRow:
    name: str
    r: float | None  # None when the correlation is undefined
    best: bool = False

    @property
    def r_times_100(self) -> str:
        return "n/a" if self.r is None else f"{100 * self.r:.2f}"


@dataclass
class MetricReport:
    rows: list[ReportRow]

    def render(self) -> str:
        width = max([len("Method")] + [len(r.name) for r in self.rows])
        header = f"{'Method':<{width}}  {'Pearson r':>9}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            mark = " *" if row.best else ""
            lines.append(f"{row.name:<{width}}  {row.r_times_100:>9}{mark}")
        return "\n".join(lines)

    def to_tsv(self) -> str:
        return "".join(f"{row.name}\t{row.r_times_100}\n" for row in self.rows)


def report(results: Sequence[tuple[str, Sequence[float], Sequence[float]]]) -> MetricReport:
    """Pearson per method; the first maximal row gets the best flag."""
    rows = []
    for name, preds, gold in results:
        try:
            r = pearson(preds, gold)
        except (UndefinedCorrelationError, ValueError):
            r = None
        rows.append(ReportRow(name, r))
    scored = [row for row in rows if row.r is not None]
    if scored:
        top = max(row.r for row in scored)
        next(row for row in scored if row.r == top).best = True
    return MetricReport(rows)
