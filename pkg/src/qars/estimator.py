"""COMET-style sentence-level quality estimator.

Segments are encoded independently and mean-pooled; the pooled vectors of
hypothesis (h), source (s) and reference (r) are combined into one feature
row and fed to a two-hidden-layer Tanh regressor. Targets live on the unit
scale (score - 1) / 4; :func:`to_likert` maps predictions back.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from . import tensor as T
from .artifacts import check_shapes, read_artifact, write_artifact
from .data import QERecord
from .encoder import (EncoderConfig, EncoderModel, ParamGroup, _param_shapes,
                      encoder_config_from_meta, encoder_meta)
from .errors import ConfigError, DataError, DimensionError, FormatError
from .tensor import Tensor
from .text import BOS, EOS, Vocab, build_vocab, encode_ids, tokenize_ws


class EstimatorMode(str, enum.Enum):
    REFERENCE = "reference"
    REFERENCE_FREE = "reference-free"
    CROSS = "cross"


FEATURE_BLOCKS = {EstimatorMode.REFERENCE: 6, EstimatorMode.REFERENCE_FREE: 4, EstimatorMode.CROSS: 1}


def feature_width(mode: EstimatorMode, dim: int) -> int:
    return FEATURE_BLOCKS[EstimatorMode(mode)] * dim


def normalize_score(score: float) -> float:
    return (score - 1.0) / 4.0


def to_likert(y: float, clamp: bool = False) -> float:
    s = 1.0 + 4.0 * y
    return min(5.0, max(1.0, s)) if clamp else s


def combine_features(h: Tensor, s: Tensor | None = None, r: Tensor | None = None,
                     mode: EstimatorMode = EstimatorMode.REFERENCE) -> Tensor:
    """Feature row(s) for the regressor; inputs are [d] vectors or [B×d] matrices.

    REFERENCE:      [h; r; h*s; h*r; |h-s|; |h-r|]
    REFERENCE_FREE: [h; s; h*s; |h-s|]
    """
    mode = EstimatorMode(mode)
    if mode is EstimatorMode.CROSS:
        raise ValueError("CROSS mode feeds the pooled cross-encoding directly")
    if s is None:
        raise DataError(f"{mode.value} features need the source vector")
    if mode is EstimatorMode.REFERENCE:
        if r is None:
            raise DataError("reference features need the reference vector")
        return T.concat([h, r, T.mul(h, s), T.mul(h, r), T.abs_(T.sub(h, s)), T.abs_(T.sub(h, r))])
    return T.concat([h, s, T.mul(h, s), T.abs_(T.sub(h, s))])


class RegressorHead:
    def __init__(self, in_dim: int, hidden: Sequence[int] = (64, 32), dropout: float = 0.0,
                 seed: int = 0, dtype=np.float32):
        hidden = tuple(int(h) for h in hidden)
        if len(hidden) != 2 or min(hidden) < 1:
            raise ConfigError(f"regressor needs exactly two positive hidden sizes, got {hidden}")
        self.in_dim = in_dim
        self.hidden = hidden
        self.dropout = dropout
        rng = np.random.default_rng(seed)
        sizes = (in_dim,) + hidden + (1,)
        self.params: dict[str, Tensor] = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out))
            self.params[f"head.{i}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
            self.params[f"head.{i}.bias"] = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)

    def zero_(self) -> None:
        for p in self.params.values():
            p.data[...] = 0

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.params.items()}

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        """x [B×in_dim] -> [B] raw scores."""
        if x.data.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"regressor expects [B×{self.in_dim}] input, got {x.shape}")
        rate = self.dropout if rng is not None else 0.0
        P = self.params
        for i in range(2):
            x = T.tanh(T.linear(x, P[f"head.{i}.weight"], P[f"head.{i}.bias"]))
            x = T.dropout(x, rate, rng)
        out = T.linear(x, P["head.2.weight"], P["head.2.bias"])
        return T.reshape(out, (x.shape[0],))


class EstimatorModel:
    """Encoder (or none, for precomputed embeddings) + regressor head in one mode."""

    def __init__(self, mode: EstimatorMode | str, encoder: EncoderModel | None, vocab: Vocab | None = None,
                 hidden: Sequence[int] = (64, 32), dropout: float = 0.0, seed: int = 0,
                 embed_dim: int | None = None, head: RegressorHead | None = None):
        self.mode = EstimatorMode(mode)
        self.encoder = encoder
        self.vocab = vocab
        if encoder is not None:
            if vocab is not None and len(vocab) != encoder.config.vocab_size:
                raise ConfigError(f"vocab has {len(vocab)} entries, encoder expects {encoder.config.vocab_size}")
            self.dim = encoder.config.dim
            dtype = encoder.dtype
        else:
            if embed_dim is None:
                raise ConfigError("embed_dim is required without an encoder")
            if self.mode is EstimatorMode.CROSS:
                raise ConfigError("CROSS mode needs an encoder")
            self.dim = embed_dim
            dtype = np.float32
        width = feature_width(self.mode, self.dim)
        self.head = head if head is not None else RegressorHead(width, hidden, dropout, seed + 1, dtype)
        if self.head.in_dim != width:
            raise ConfigError(f"{self.mode.value} mode produces {width} features but the head takes {self.head.in_dim}")
        self.set_dropout(dropout)
        self._ids: dict[str, list[int]] = {}

    def set_dropout(self, rate: float) -> None:
        self.head.dropout = rate
        if self.encoder is not None:
            self.encoder.dropout = rate

    @property
    def params(self) -> dict[str, Tensor]:
        out = {}
        if self.encoder is not None:
            out.update({"encoder." + k: v for k, v in self.encoder.params.items()})
        out.update(self.head.params)
        return out

    def param_groups(self) -> list[ParamGroup]:
        """Encoder groups bottom to top, then the head."""
        groups = []
        if self.encoder is not None:
            for g in self.encoder.param_groups():
                groups.append(ParamGroup(g.name, {"encoder." + k: v for k, v in g.params.items()}))
        groups.append(ParamGroup("head", dict(self.head.params)))
        return groups

    def astype(self, dtype) -> EstimatorModel:
        enc = self.encoder.astype(dtype) if self.encoder is not None else None
        head = RegressorHead.__new__(RegressorHead)
        head.in_dim, head.hidden, head.dropout = self.head.in_dim, self.head.hidden, self.head.dropout
        head.params = {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.head.params.items()}
        return EstimatorModel(self.mode, enc, self.vocab, dropout=self.head.dropout,
                              embed_dim=self.dim, head=head)

    # -- inputs -------------------------------------------------------------------

    def token_ids(self, text: str) -> list[int]:
        ids = self._ids.get(text)
        if ids is None:
            if self.vocab is None:
                raise ConfigError("model has no vocabulary")
            ids = encode_ids(tokenize_ws(text), self.vocab)
            self._ids[text] = ids
        return ids

    def check_record(self, rec: QERecord) -> None:
        if self.mode is EstimatorMode.REFERENCE and (rec.source is None or rec.reference is None):
            raise DataError("reference mode needs source and reference for every record")
        if self.mode is not EstimatorMode.REFERENCE and rec.source is None:
            raise DataError(f"{self.mode.value} mode needs a source for every record")

    def _segments(self, records: Sequence[QERecord]) -> list[list[int]]:
        segs = []
        for rec in records:
            self.check_record(rec)
            if self.mode is EstimatorMode.CROSS:
                segs.append(cross_sequence(self.token_ids(rec.source), self.token_ids(rec.hypothesis)))
                continue
            fields = [rec.hypothesis, rec.source]
            if self.mode is EstimatorMode.REFERENCE:
                fields.append(rec.reference)
            segs.extend([BOS] + self.token_ids(f) + [EOS] for f in fields)
        return segs

    # -- forward ------------------------------------------------------------------

    def features(self, pooled: Tensor, batch: int) -> Tensor:
        """Turn pooled segment rows (record-major order) into feature rows."""
        if self.mode is EstimatorMode.CROSS:
            return pooled
        k = 3 if self.mode is EstimatorMode.REFERENCE else 2
        rows = np.arange(batch) * k
        h = T.take_rows(pooled, rows)
        s = T.take_rows(pooled, rows + 1)
        r = T.take_rows(pooled, rows + 2) if k == 3 else None
        return combine_features(h, s, r, self.mode)

    def forward(self, records: Sequence[QERecord], rng: np.random.Generator | None = None,
                encoder_grad: bool = True) -> Tensor:
        """Raw unit-scale predictions [B]; dropout only when ``rng`` is given."""
        if self.encoder is None:
            raise ConfigError("model without encoder: use forward_pooled")
        segs = self._segments(records)
        if encoder_grad:
            _, pooled = self.encoder.forward(segs, rng)
        else:
            with T.no_grad():
                _, pooled = self.encoder.forward(segs, rng)
        return self.head.forward(self.features(pooled, len(records)), rng)

    def forward_pooled(self, h: Tensor, s: Tensor | None = None, r: Tensor | None = None,
                       rng: np.random.Generator | None = None) -> Tensor:
        """Predictions from externally pooled [B×d] vectors (precomputed embeddings)."""
        if self.mode is EstimatorMode.CROSS:
            feats = h
        else:
            feats = combine_features(h, s, r, self.mode)
        return self.head.forward(feats, rng)


def build_estimator(mode: EstimatorMode | str, records: Sequence[QERecord], hidden: Sequence[int] = (64, 32),
                    dropout: float = 0.0, seed: int = 0, dim: int = 64, layers: int = 2, heads: int = 2,
                    max_seq_len: int = 128, positional: str = "sinusoidal",
                    vocab: Vocab | None = None) -> EstimatorModel:
    """Fresh estimator whose vocabulary covers every field of ``records``."""
    if vocab is None:
        texts = [t for r in records for t in (r.source, r.hypothesis, r.reference) if t is not None]
        vocab = build_vocab(tokenize_ws(t) for t in texts)
    cfg = EncoderConfig(vocab_size=len(vocab), dim=dim, layers=layers, heads=heads,
                        max_seq_len=max_seq_len, positional=positional)
    return EstimatorModel(mode, EncoderModel(cfg, seed=seed), vocab, hidden=hidden, dropout=dropout, seed=seed)


def cross_sequence(source_ids: Sequence[int], hyp_ids: Sequence[int]) -> list[int]:
    return [BOS] + list(source_ids) + [EOS] + list(hyp_ids) + [EOS]


def predict(model: EstimatorModel, record: QERecord) -> float:
    """Raw unit-scale prediction for one record (dropout off)."""
    return float(predict_many(model, [record])[0])


def predict_many(model: EstimatorModel, records: Sequence[QERecord], batch_size: int = 16) -> np.ndarray:
    out = []
    with T.no_grad():
        for i in range(0, len(records), batch_size):
            out.append(model.forward(records[i:i + batch_size]).data)
    return np.concatenate(out) if out else np.zeros(0)


def cross_encode_predict(model: EstimatorModel, source_ids: Sequence[int], hyp_ids: Sequence[int]) -> float:
    if model.mode is not EstimatorMode.CROSS:
        raise ConfigError("cross_encode_predict needs a CROSS mode model")
    seq = cross_sequence(source_ids, hyp_ids)
    if len(seq) > model.encoder.config.max_seq_len:
        raise DimensionError(f"cross sequence of length {len(seq)} exceeds max_seq_len {model.encoder.config.max_seq_len}")
    with T.no_grad():
        _, pooled = model.encoder.forward([seq])
        return float(model.head.forward(pooled).data[0])


# -- persistence ----------------------------------------------------------------

VOCAB_FILE = "vocab.txt"


def save_estimator(model: EstimatorModel, path: str | Path) -> None:
    meta = {
        "kind": "estimator",
        "mode": model.mode.value,
        "hidden_units": ",".join(str(h) for h in model.head.hidden),
        "dropout": repr(model.head.dropout),
        "embed_dim": str(model.dim),
        "has_encoder": "1" if model.encoder is not None else "0",
    }
    if model.encoder is not None:
        meta.update(encoder_meta(model.encoder.config, prefix="encoder."))
    write_artifact(path, meta, {k: v.data for k, v in model.params.items()})
    if model.vocab is not None:
        model.vocab.save(Path(path) / VOCAB_FILE)


def load_estimator(path: str | Path) -> EstimatorModel:
    meta, params = read_artifact(path)
    if meta.get("kind") != "estimator":
        raise FormatError(f"{path}: not an estimator artifact (kind={meta.get('kind')!r})")
    try:
        mode = EstimatorMode(meta["mode"])
        hidden = tuple(int(h) for h in meta["hidden_units"].split(","))
        dropout = float(meta["dropout"])
        dim = int(meta["embed_dim"])
        has_encoder = meta["has_encoder"] == "1"
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad estimator metadata ({e})") from None
    encoder = vocab = None
    if has_encoder:
        cfg = encoder_config_from_meta(meta, prefix="encoder.")
        if cfg.dim != dim:
            raise FormatError(f"{path}: embed_dim {dim} disagrees with encoder dim {cfg.dim}")
        encoder = EncoderModel(cfg)
        vocab_path = Path(path) / VOCAB_FILE
        if vocab_path.is_file():
            vocab = Vocab.load(vocab_path)
    model = EstimatorModel(mode, encoder, vocab, hidden=hidden, dropout=dropout, embed_dim=dim)
    expected = {}
    if encoder is not None:
        expected.update({"encoder." + k: v for k, v in _param_shapes(encoder.config).items()})
    expected.update(model.head.param_shapes())
    check_shapes(expected, params, str(path))
    for name, arr in params.items():
        if name.startswith("encoder."):
            encoder.params[name[len("encoder."):]] = Tensor(arr, requires_grad=True)
        else:
            model.head.params[name] = Tensor(arr, requires_grad=True)
    return model
