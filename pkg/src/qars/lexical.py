"""Corpus BLEU and chrF."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field

from .text import TokenSeq, char_ngrams


@dataclass
class MetricScore:
    name: str
    value: float
    details: dict[str, float] = field(default_factory=dict)


def _word_ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq], max_n: int = 4) -> MetricScore:
    """Corpus-level BLEU with a single reference per hypothesis and no smoothing.

    Clipped n-gram matches and candidate n-gram totals are summed over the
    whole corpus before dividing. Any zero precision zeroes the score. An
    order for which neither hypotheses nor references contain a single n-gram
    (every sentence shorter than n) is left out of the geometric mean.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"bleu: {len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise ValueError("bleu: empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    ref_totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h, r = tuple(hyp), tuple(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc = _word_ngrams(h, n)
            rc = _word_ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += sum(hc.values())
            ref_totals[n - 1] += sum(rc.values())

    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    details = {f"p{n}": p for n, p in enumerate(precisions, 1)}
    used = [p for p, t, rt in zip(precisions, totals, ref_totals) if t or rt]
    details["hyp_len"] = float(hyp_len)
    details["ref_len"] = float(ref_len)
    if hyp_len == 0:
        bp = 0.0
    else:
        bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    details["bp"] = bp
    if not used or min(used) == 0.0:
        return MetricScore("bleu", 0.0, details)
    log_avg = sum(math.log(p) for p in used) / len(used)
    return MetricScore("bleu", min(1.0, bp * math.exp(log_avg)), details)


def chrf(hyp: str, ref: str, max_n: int = 6, beta: float = 2.0) -> MetricScore:
    """Sentence chrF: character n-gram F-beta, precision and recall averaged over orders.

    Orders where neither side has any n-gram are skipped.
    """
    if max_n < 1:
        raise ValueError("chrf: max_n must be >= 1")
    precs, recs = [], []
    for n in range(1, max_n + 1):
        hc = char_ngrams(hyp, n)
        rc = char_ngrams(ref, n)
        h_total, r_total = sum(hc.values()), sum(rc.values())
        if h_total == 0 and r_total == 0:
            continue
        match = sum(min(c, rc[g]) for g, c in hc.items())
        precs.append(match / h_total if h_total else 0.0)
        recs.append(match / r_total if r_total else 0.0)
    p = sum(precs) / len(precs) if precs else 0.0
    r = sum(recs) / len(recs) if recs else 0.0
    b2 = beta * beta
    denom = b2 * p + r
    f = (1 + b2) * p * r / denom if p + r > 0 and denom > 0 else 0.0
    return MetricScore("chrf", f, {"precision": p, "recall": r})


def corpus_chrf(hyps: Sequence[str], refs: Sequence[str], max_n: int = 6, beta: float = 2.0) -> MetricScore:
    """Mean of sentence chrF scores, reduced left to right."""
    if len(hyps) != len(refs):
        raise ValueError(f"chrf: {len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise ValueError("chrf: empty corpus")
    total = 0.0
    for h, r in zip(hyps, refs):
        total += chrf(h, r, max_n, beta).value
    return MetricScore("chrf", total / len(hyps))
