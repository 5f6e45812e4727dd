"""BERTScore-style greedy cosine matching between token embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import SegmentEmbeddings
from .errors import DimensionError


@dataclass(frozen=True)
class BertScoreResult:
    precision: float
    recall: float
    f1: float


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, m / safe, 0.0)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; zero vectors score 0 against everything.

    Computed elementwise rather than through BLAS so that
    ``cosine_matrix(b, a)`` is bitwise the transpose of ``cosine_matrix(a, b)``.
    """
    ua, ub = _unit_rows(a), _unit_rows(b)
    return (ua[:, None, :] * ub[None, :, :]).sum(axis=-1)


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, SegmentEmbeddings):
        x = x.tokens.data
    return np.asarray(x, dtype=np.float64)


def bertscore(hyp, ref) -> BertScoreResult:
    """Greedy-matching precision, recall and F1.

    ``hyp`` and ``ref`` are SegmentEmbeddings or [n×d] arrays of token vectors.
    No IDF weighting and no baseline rescaling.
    """
    h, r = _as_matrix(hyp), _as_matrix(ref)
    if h.ndim != 2 or r.ndim != 2 or h.shape[0] == 0 or r.shape[0] == 0:
        raise DimensionError(f"bertscore: need non-empty token matrices, got {h.shape} and {r.shape}")
    if h.shape[1] != r.shape[1]:
        raise DimensionError(f"bertscore: embedding dims differ ({h.shape[1]} vs {r.shape[1]})")
    sim = cosine_matrix(h, r)
    p = float(sim.max(axis=1).mean())
    rc = float(sim.max(axis=0).mean())
    f = 2 * p * rc / (p + rc) if p + rc != 0 else 0.0
    return BertScoreResult(p, rc, f)
