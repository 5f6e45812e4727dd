"""Planted-function QE data for end-to-end learning checks.

A reference is a random word sequence; its source is a word-by-word
"translation" into a disjoint source vocabulary; the hypothesis is the
reference with a random number of words substituted. The gold score is a
decreasing function of the distance between the pooled hypothesis and
reference vectors under a fixed teacher encoder, plus Gaussian noise, kept
within the Likert range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import QERecord
from .encoder import EncoderConfig, EncoderModel
from .text import BOS, EOS, Vocab, build_vocab, encode_ids, tokenize_ws


@dataclass
class PlantedData:
    train: list[QERecord]
    dev: list[QERecord]
    vocab: Vocab
    teacher: EncoderConfig
    teacher_seed: int

    def student_encoder(self, dtype=np.float32) -> EncoderModel:
        """A fresh encoder initialised exactly like the teacher."""
        return EncoderModel(self.teacher, seed=self.teacher_seed, dtype=dtype)


def make_planted_dataset(n_train: int = 2000, n_dev: int = 200, n_words: int = 60,
                         min_len: int = 5, max_len: int = 12, noise: float = 0.1, seed: int = 0,
                         dim: int = 32, layers: int = 1, heads: int = 2) -> PlantedData:
    """``noise`` is the noise standard deviation as a fraction of the 1-5 score range."""
    rng = np.random.default_rng(seed)
    tgt_words = [f"w{i}" for i in range(n_words)]
    src_words = [f"s{i}" for i in range(n_words)]
    lexicon = dict(zip(tgt_words, rng.permutation(src_words)))

    n = n_train + n_dev
    rows = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        ref = list(rng.choice(tgt_words, size=length))
        hyp = list(ref)
        n_sub = int(rng.integers(0, length + 1))
        for pos in rng.choice(length, size=n_sub, replace=False):
            hyp[pos] = str(rng.choice(tgt_words))
        src = [lexicon[w] for w in ref]
        rows.append((" ".join(src), " ".join(hyp), " ".join(ref)))

    vocab = build_vocab(tokenize_ws(t) for row in rows for t in row)
    teacher_cfg = EncoderConfig(vocab_size=len(vocab), dim=dim, layers=layers, heads=heads, max_seq_len=64)
    teacher_seed = seed + 17
    teacher = EncoderModel(teacher_cfg, seed=teacher_seed, dtype=np.float64)

    dists = np.empty(n)
    with T.no_grad():
        for lo in range(0, n, 64):
            chunk = rows[lo:lo + 64]
            segs = []
            for _, hyp, ref in chunk:
                segs.append([BOS] + encode_ids(tokenize_ws(hyp), vocab) + [EOS])
                segs.append([BOS] + encode_ids(tokenize_ws(ref), vocab) + [EOS])
            _, pooled = teacher.forward(segs)
            p = pooled.data
            dists[lo:lo + len(chunk)] = np.linalg.norm(p[0::2] - p[1::2], axis=1)

    scale = np.quantile(dists, 0.95)
    clean = 5.0 - 4.0 * np.minimum(dists / scale, 1.0)
    scores = np.clip(clean + rng.normal(0.0, noise * 4.0, n), 1.0, 5.0)
    records = [QERecord(hypothesis=h, score=float(s), source=src, reference=ref)
               for (src, h, ref), s in zip(rows, scores)]
    return PlantedData(records[:n_train], records[n_train:], vocab, teacher_cfg, teacher_seed)
