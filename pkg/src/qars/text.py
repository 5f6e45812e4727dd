"""Whitespace tokenization, character n-grams and vocabularies."""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[str, ...]
    source_text: str = ""

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def tokenize_ws(text: str) -> TokenSeq:
    return TokenSeq(tuple(text.split()), text)


def char_ngrams(text: str, n: int) -> Counter:
    """Character n-gram counts of ``text`` with all whitespace removed."""
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    chars = "".join(text.split())
    return Counter(chars[i:i + n] for i in range(len(chars) - n + 1))


@dataclass(frozen=True)
class Vocab:
    """Token ↔ id map. Ids 0-3 are PAD, UNK, BOS, EOS; regular tokens start at 4."""

    itos: tuple[str, ...] = RESERVED
    stoi: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if tuple(self.itos[:4]) != RESERVED:
            raise ValueError("vocab must start with the reserved symbols")
        if not self.stoi:
            self.stoi.update({tok: i for i, tok in enumerate(self.itos) if i >= 4})

    def __len__(self):
        return len(self.itos)

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.itos[4:]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocab:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(set(lines)) != len(lines):
            raise ValueError(f"{path}: duplicate vocabulary entries")
        return cls(RESERVED + tuple(lines))


def build_vocab(corpus: Iterable[TokenSeq | Iterable[str]], min_freq: int = 1) -> Vocab:
    """Tokens seen at least ``min_freq`` times, by descending frequency then lexicographically."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter = Counter()
    for seq in corpus:
        counts.update(seq)
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
                  key=lambda t: (-counts[t], t))
    return Vocab(RESERVED + tuple(kept))


def encode_ids(seq: TokenSeq | Iterable[str], vocab: Vocab, add_bos_eos: bool = False) -> list[int]:
    ids = [vocab.lookup(t) for t in seq]
    if add_bos_eos:
        return [BOS] + ids + [EOS]
    return ids
