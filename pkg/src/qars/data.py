"""Dataset files, annotator averaging, corpus statistics, dev splits and back-translation merge.

Layouts of the TAB-separated inputs file (no header, one segment per line):

``nonblind``        source, hypothesis, reference
``blind``           hypothesis
``reference-free``  source, hypothesis   (the merged back-translation set)

The expected file holds one decimal score per line, aligned by line number.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .text import tokenize_ws

LIKERT_MIN, LIKERT_MAX = 1.0, 5.0

LAYOUT_COLUMNS = {
    "nonblind": ("source", "hypothesis", "reference"),
    "blind": ("hypothesis",),
    "reference-free": ("source", "hypothesis"),
}


@dataclass(frozen=True)
class QERecord:
    hypothesis: str
    score: float
    source: str | None = None
    reference: str | None = None

    def __post_init__(self):
        if not (LIKERT_MIN <= self.score <= LIKERT_MAX):
            raise DataError(f"score {self.score} outside the Likert range [1, 5]")
        if not self.hypothesis.strip():
            raise DataError("empty hypothesis")


@dataclass(frozen=True)
class DatasetStats:
    segments: int
    avg_source_tokens: float | None
    avg_hyp_tokens: float
    min_score: float
    avg_score: float

    def format(self) -> str:
        def fmt(v):
            return "-" if v is None else f"{v:.2f}"
        return "\n".join([
            f"segments: {self.segments}",
            f"avg_source_tokens: {fmt(self.avg_source_tokens)}",
            f"avg_hyp_tokens: {fmt(self.avg_hyp_tokens)}",
            f"min_score: {fmt(self.min_score)}",
            f"avg_score: {fmt(self.avg_score)}",
        ])


def _read_lines(path: str | Path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def parse_score(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse score {text!r}") from None
    if not math.isfinite(value) or not (LIKERT_MIN <= value <= LIKERT_MAX):
        raise DataError(f"{where}: score {text!r} outside the Likert range [1, 5]")
    return value


def read_scores(path: str | Path) -> list[float]:
    return [parse_score(line.strip(), f"{path}:{i}") for i, line in enumerate(_read_lines(path), 1)]


def read_numbers(path: str | Path) -> list[float]:
    """One unconstrained float per line (model predictions)."""
    out = []
    for i, line in enumerate(_read_lines(path), 1):
        try:
            out.append(float(line))
        except ValueError:
            raise DataError(f"{path}:{i}: cannot parse number {line!r}") from None
    return out


def read_inputs(path: str | Path, layout: str) -> list[dict[str, str]]:
    if layout not in LAYOUT_COLUMNS:
        raise DataError(f"unknown layout {layout!r}")
    cols = LAYOUT_COLUMNS[layout]
    rows = []
    for i, line in enumerate(_read_lines(path), 1):
        parts = line.split("\t")
        if len(parts) != len(cols):
            raise DataError(f"{path}:{i}: expected {len(cols)} column(s) for {layout} layout, found {len(parts)}")
        rows.append(dict(zip(cols, parts)))
    return rows


def load_dataset(in_path: str | Path, expected_path: str | Path, layout: str) -> list[QERecord]:
    rows = read_inputs(in_path, layout)
    scores = read_scores(expected_path)
    if len(rows) != len(scores):
        raise DataError(f"{in_path} has {len(rows)} lines but {expected_path} has {len(scores)}")
    records = []
    for i, (row, score) in enumerate(zip(rows, scores), 1):
        try:
            records.append(QERecord(score=score, **row))
        except DataError as e:
            raise DataError(f"{in_path}:{i}: {e}") from None
    return records


def format_score(score: float) -> str:
    return repr(float(score))


def write_dataset(records: Sequence[QERecord], in_path: str | Path, expected_path: str | Path,
                  layout: str) -> None:
    cols = LAYOUT_COLUMNS[layout]
    lines = []
    for i, rec in enumerate(records):
        fields = [getattr(rec, c) for c in cols]
        if any(f is None for f in fields):
            raise DataError(f"record {i} lacks a field required by the {layout} layout")
        lines.append("\t".join(fields))
    Path(in_path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    Path(expected_path).write_text("".join(format_score(r.score) + "\n" for r in records), encoding="utf-8")


def average_annotators(rows: Sequence[Sequence[int]]) -> list[float]:
    """Per-segment mean of integer Likert judgments."""
    out = []
    for i, row in enumerate(rows):
        if len(row) == 0:
            raise DataError(f"row {i}: no annotator scores")
        for s in row:
            if s != int(s) or not (1 <= s <= 5):
                raise DataError(f"row {i}: annotator score {s!r} not in 1..5")
        out.append(math.fsum(row) / len(row))
    return out


def dataset_stats(records: Sequence[QERecord]) -> DatasetStats:
    if not records:
        raise DataError("dataset_stats: no records")
    n = len(records)
    sources = [r.source for r in records if r.source is not None]
    avg_src = sum(len(tokenize_ws(s)) for s in sources) / len(sources) if sources else None
    scores = [r.score for r in records]
    return DatasetStats(
        segments=n,
        avg_source_tokens=avg_src,
        avg_hyp_tokens=sum(len(tokenize_ws(r.hypothesis)) for r in records) / n,
        min_score=min(scores),
        avg_score=math.fsum(scores) / n,
    )


def split_dev(items: Sequence, seed: int, dev_size: int = 100) -> tuple[list, list]:
    """Seeded uniform dev sample without replacement; both parts keep input order."""
    n = len(items)
    if dev_size < 0 or dev_size >= n:
        raise DataError(f"dev_size {dev_size} must be below the number of records ({n})")
    picked = np.random.default_rng(seed).choice(n, size=dev_size, replace=False)
    in_dev = np.zeros(n, dtype=bool)
    in_dev[picked] = True
    train = [x for x, d in zip(items, in_dev) if not d]
    dev = [x for x, d in zip(items, in_dev) if d]
    return train, dev


def merge_backtranslation(blind_records: Sequence[QERecord], bt_sources: str | Path | Sequence[str],
                          nonblind_records: Sequence[QERecord]) -> list[QERecord]:
    """Attach back-translated sources to blind records and append them to the nonblind data.

    The nonblind records are reduced to source + hypothesis + score.
    """
    lines = _read_lines(bt_sources) if isinstance(bt_sources, (str, Path)) else list(bt_sources)
    if len(lines) != len(blind_records):
        raise DataError(f"back-translation has {len(lines)} lines but the blind set has {len(blind_records)} records")
    merged = []
    for rec in nonblind_records:
        if rec.source is None:
            raise DataError("nonblind record without a source segment")
        merged.append(replace(rec, reference=None))
    for i, (rec, src) in enumerate(zip(blind_records, lines), 1):
        if not src.strip():
            raise DataError(f"back-translation line {i} is empty")
        merged.append(replace(rec, source=src, reference=None))
    return merged
