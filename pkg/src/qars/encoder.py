"""Small pre-norm transformer encoder producing token and mean-pooled segment vectors.

Several segments are encoded at once by packing their tokens into one
[N×d] matrix; self-attention is restricted to each segment with a
block-diagonal mask, and pooling is a matmul with a row-averaging matrix.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .artifacts import check_shapes, read_artifact, write_artifact
from .errors import DimensionError, FormatError
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    layers: int = 2
    heads: int = 2
    max_seq_len: int = 128
    positional: str = "sinusoidal"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("encoder needs at least one layer")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.positional not in ("sinusoidal", "learned"):
            raise ValueError(f"unknown positional encoding {self.positional!r}")
        if self.vocab_size < 1 or self.max_seq_len < 1:
            raise ValueError("vocab_size and max_seq_len must be positive")

    @property
    def ffn_dim(self) -> int:
        return 4 * self.dim


@dataclass
class ParamGroup:
    name: str
    params: dict[str, Tensor]

    def size(self) -> int:
        return sum(p.data.size for p in self.params.values())


@dataclass
class SegmentEmbeddings:
    tokens: Tensor  # [n×d]
    pooled: Tensor  # [d]


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def mean_pool(tokens: Tensor) -> Tensor:
    """Average of the rows of an [n×d] matrix, as a [d] vector."""
    n, d = tokens.shape
    avg = Tensor(np.full((1, n), 1.0 / n), dtype=tokens.dtype)
    return T.reshape(T.matmul(avg, tokens), (d,))


def _param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.dim, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {"embeddings.token": (cfg.vocab_size, d)}
    if cfg.positional == "learned":
        shapes["embeddings.position"] = (cfg.max_seq_len, d)
    for i in range(cfg.layers):
        p = f"layers.{i}."
        shapes[p + "attn_norm.gain"] = (d,)
        shapes[p + "attn_norm.bias"] = (d,)
        for name in ("query", "key", "value", "out"):
            shapes[p + f"attn.{name}.weight"] = (d, d)
            shapes[p + f"attn.{name}.bias"] = (d,)
        shapes[p + "ffn_norm.gain"] = (d,)
        shapes[p + "ffn_norm.bias"] = (d,)
        shapes[p + "ffn.in.weight"] = (d, f)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (f, d)
        shapes[p + "ffn.out.bias"] = (d,)
    shapes["final_norm.gain"] = (d,)
    shapes["final_norm.bias"] = (d,)
    return shapes


class EncoderModel:
    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dropout = 0.0
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        for name, shape in _param_shapes(config).items():
            if name.endswith(".gain"):
                init = np.ones(shape)
            elif name.endswith(".bias"):
                init = np.zeros(shape)
            elif name == "embeddings.token":
                init = rng.normal(0.0, 1.0, shape)
            elif name == "embeddings.position":
                init = rng.normal(0.0, 0.1, shape)
            else:
                init = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
            self.params[name] = Tensor(init.astype(dtype), requires_grad=True)
        self._pos_table = sinusoidal_table(config.max_seq_len, config.dim)

    @property
    def dtype(self):
        return self.params["embeddings.token"].dtype

    def astype(self, dtype) -> EncoderModel:
        """Copy with every parameter cast to ``dtype`` (used for wide-precision checks)."""
        clone = EncoderModel.__new__(EncoderModel)
        clone.config = self.config
        clone.dropout = self.dropout
        clone._pos_table = self._pos_table
        clone.params = {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.params.items()}
        return clone

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def param_groups(self) -> list[ParamGroup]:
        """[embeddings, layer 1, ..., layer L]; the final norm belongs to the top layer."""
        L = self.config.layers
        groups = [ParamGroup("embeddings", {})] + [ParamGroup(f"layer{i + 1}", {}) for i in range(L)]
        for name, p in self.params.items():
            if name.startswith("embeddings."):
                groups[0].params[name] = p
            elif name.startswith("layers."):
                groups[int(name.split(".")[1]) + 1].params[name] = p
            else:
                groups[L].params[name] = p
        return groups

    # -- forward ------------------------------------------------------------

    def forward(self, segments: Sequence[Sequence[int]],
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Encode several id sequences at once.

        Returns the packed token matrix [N×d] (segments stacked in order) and
        the pooled matrix [S×d]. Dropout is active only when ``rng`` is given.
        """
        cfg = self.config
        lengths = [len(s) for s in segments]
        if not segments or min(lengths) == 0:
            raise DimensionError("encode: empty sequence")
        if max(lengths) > cfg.max_seq_len:
            raise DimensionError(f"encode: sequence of length {max(lengths)} exceeds max_seq_len {cfg.max_seq_len}")
        ids = np.concatenate([np.asarray(s, dtype=np.int64) for s in segments])
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise DimensionError(f"encode: token id out of range for vocab_size {cfg.vocab_size}")
        positions = np.concatenate([np.arange(n) for n in lengths])
        seg_of = np.repeat(np.arange(len(segments)), lengths)
        mask = seg_of[:, None] == seg_of[None, :]
        dtype = self.dtype
        rate = self.dropout if rng is not None else 0.0
        P = self.params

        x = T.take_rows(P["embeddings.token"], ids)
        if cfg.positional == "learned":
            x = T.add(x, T.take_rows(P["embeddings.position"], positions))
        else:
            x = T.add(x, Tensor(self._pos_table[positions], dtype=dtype))

        dh = cfg.dim // cfg.heads
        inv_sqrt = 1.0 / math.sqrt(dh)
        for i in range(cfg.layers):
            p = f"layers.{i}."
            a = T.layer_norm(x, P[p + "attn_norm.gain"], P[p + "attn_norm.bias"])
            q = T.linear(a, P[p + "attn.query.weight"], P[p + "attn.query.bias"])
            k = T.linear(a, P[p + "attn.key.weight"], P[p + "attn.key.bias"])
            v = T.linear(a, P[p + "attn.value.weight"], P[p + "attn.value.bias"])
            heads = []
            for h in range(cfg.heads):
                lo, hi = h * dh, (h + 1) * dh
                qh, kh, vh = T.slice_cols(q, lo, hi), T.slice_cols(k, lo, hi), T.slice_cols(v, lo, hi)
                scores = T.scale(T.matmul(qh, T.transpose(kh)), inv_sqrt)
                attn = T.dropout(T.softmax_rows(scores, mask), rate, rng)
                heads.append(T.matmul(attn, vh))
            ctx = heads[0] if len(heads) == 1 else T.concat(heads)
            x = T.add(x, T.linear(ctx, P[p + "attn.out.weight"], P[p + "attn.out.bias"]))

            f = T.layer_norm(x, P[p + "ffn_norm.gain"], P[p + "ffn_norm.bias"])
            f = T.gelu(T.linear(f, P[p + "ffn.in.weight"], P[p + "ffn.in.bias"]))
            f = T.linear(f, P[p + "ffn.out.weight"], P[p + "ffn.out.bias"])
            x = T.add(x, T.dropout(f, rate, rng))
        x = T.layer_norm(x, P["final_norm.gain"], P["final_norm.bias"])

        pool = np.zeros((len(segments), len(ids)))
        pool[seg_of, np.arange(len(ids))] = 1.0 / np.asarray(lengths)[seg_of]
        pooled = T.matmul(Tensor(pool, dtype=dtype), x)
        return x, pooled


def encode(model: EncoderModel, ids: Sequence[int], rng: np.random.Generator | None = None) -> SegmentEmbeddings:
    tokens, pooled = model.forward([ids], rng)
    return SegmentEmbeddings(tokens, T.reshape(pooled, (model.config.dim,)))


def param_groups(model: EncoderModel) -> list[ParamGroup]:
    return model.param_groups()


# -- persistence ----------------------------------------------------------------

def encoder_meta(cfg: EncoderConfig, prefix: str = "") -> dict[str, str]:
    return {prefix + k: str(v) for k, v in asdict(cfg).items()}


def encoder_config_from_meta(meta: dict[str, str], prefix: str = "") -> EncoderConfig:
    try:
        return EncoderConfig(
            vocab_size=int(meta[prefix + "vocab_size"]),
            dim=int(meta[prefix + "dim"]),
            layers=int(meta[prefix + "layers"]),
            heads=int(meta[prefix + "heads"]),
            max_seq_len=int(meta[prefix + "max_seq_len"]),
            positional=meta[prefix + "positional"],
        )
    except KeyError as e:
        raise FormatError(f"metadata lacks encoder field {e.args[0]}") from None
    except ValueError as e:
        raise FormatError(f"bad encoder config in metadata: {e}") from None


def save_model(model: EncoderModel, path: str | Path) -> None:
    meta = {"kind": "encoder", **encoder_meta(model.config)}
    write_artifact(path, meta, {k: v.data for k, v in model.params.items()})


def load_model(path: str | Path) -> EncoderModel:
    meta, params = read_artifact(path)
    if meta.get("kind") != "encoder":
        raise FormatError(f"{path}: not an encoder artifact (kind={meta.get('kind')!r})")
    cfg = encoder_config_from_meta(meta)
    check_shapes(_param_shapes(cfg), params, str(path))
    model = EncoderModel(cfg)
    for name, arr in params.items():
        model.params[name] = Tensor(arr, requires_grad=True)
    return model


# -- QEEMB precomputed embeddings -------------------------------------------------

QEEMB_MAGIC = b"QEEMB1\n"


def save_precomputed(path: str | Path, segments: Sequence[np.ndarray]) -> None:
    """Write per-token embedding matrices [n_i×d] in QEEMB format."""
    mats = [np.asarray(m, dtype="<f4") for m in segments]
    dims = {m.shape[1] for m in mats if m.ndim == 2}
    if len(dims) > 1 or any(m.ndim != 2 for m in mats):
        raise DimensionError("all segments must be 2-D with the same embedding dimension")
    d = dims.pop() if dims else 0
    with open(path, "wb") as fh:
        fh.write(QEEMB_MAGIC)
        fh.write(struct.pack("<II", d, len(mats)))
        for m in mats:
            fh.write(struct.pack("<I", m.shape[0]))
            fh.write(np.ascontiguousarray(m).tobytes())


def load_precomputed(path: str | Path, expected_dim: int | None = None) -> list[SegmentEmbeddings]:
    buf = Path(path).read_bytes()
    if not buf.startswith(QEEMB_MAGIC):
        raise FormatError(f"{path}: bad magic, not a QEEMB file", 0)
    off = len(QEEMB_MAGIC)
    if len(buf) < off + 8:
        raise FormatError(f"{path}: truncated header", off)
    d, count = struct.unpack_from("<II", buf, off)
    if expected_dim is not None and d != expected_dim:
        raise FormatError(f"{path}: embedding dim {d} != expected {expected_dim}", off)
    off += 8
    out = []
    for s in range(count):
        if len(buf) < off + 4:
            raise FormatError(f"{path}: truncated before segment {s}", off)
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        nbytes = n * d * 4
        if len(buf) < off + nbytes:
            raise FormatError(f"{path}: truncated inside segment {s}", off)
        mat = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off).reshape(n, d).astype(np.float32)
        off += nbytes
        pooled = mat.mean(axis=0) if n else np.zeros(d, dtype=np.float32)
        out.append(SegmentEmbeddings(Tensor(mat), Tensor(pooled)))
    if off != len(buf):
        raise FormatError(f"{path}: trailing bytes after {count} segments", off)
    return out
