"""Model artifact directories: ``metadata.txt`` plus ``params.bin``.

metadata.txt is UTF-8 text. Header lines are ``key: value``; the parameter
manifest follows, one line per tensor::

    param<TAB>name<TAB>shape (comma separated)<TAB>byte offset

params.bin holds every tensor as little-endian float32, concatenated in
manifest order. The header records a format version and the SHA-256 of
params.bin.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT_VERSION = "1"
METADATA = "metadata.txt"
PARAMS = "params.bin"


def write_artifact(path: str | Path, meta: dict[str, str], params: dict[str, np.ndarray]) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    blobs, manifest, offset = [], [], 0
    for name, arr in params.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        shape = ",".join(str(s) for s in arr.shape)
        manifest.append(f"param\t{name}\t{shape}\t{offset}")
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    lines = [f"format_version: {FORMAT_VERSION}"]
    lines += [f"{k}: {v}" for k, v in meta.items()]
    lines.append(f"checksum: sha256:{hashlib.sha256(payload).hexdigest()}")
    lines += manifest
    (out / PARAMS).write_bytes(payload)
    (out / METADATA).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_artifact(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Return (metadata, params). Params come back as float32 arrays."""
    root = Path(path)
    meta_path = root / METADATA
    if not meta_path.is_file():
        raise FormatError(f"{root}: missing {METADATA}")
    meta: dict[str, str] = {}
    manifest: list[tuple[str, tuple[int, ...], int]] = []
    for lineno, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        if line.startswith("param\t"):
            parts = line.split("\t")
            if len(parts) != 4:
                raise FormatError(f"{meta_path}:{lineno}: malformed manifest line")
            shape = tuple(int(s) for s in parts[2].split(",") if s)
            manifest.append((parts[1], shape, int(parts[3])))
            continue
        key, sep, value = line.partition(": ")
        if not sep:
            raise FormatError(f"{meta_path}:{lineno}: expected 'key: value'")
        meta[key] = value
    version = meta.pop("format_version", None)
    if version != FORMAT_VERSION:
        raise FormatError(f"{root}: unsupported artifact version {version!r} (expected {FORMAT_VERSION})")

    payload = (root / PARAMS).read_bytes()
    checksum = meta.pop("checksum", "")
    if checksum != f"sha256:{hashlib.sha256(payload).hexdigest()}":
        raise FormatError(f"{root}: checksum mismatch for {PARAMS}")

    params: dict[str, np.ndarray] = {}
    expected_offset = 0
    for name, shape, offset in manifest:
        if offset != expected_offset:
            raise FormatError(f"{root}: parameter {name} at unexpected offset", offset)
        size = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + size > len(payload):
            raise FormatError(f"{root}: {PARAMS} truncated reading {name}", offset)
        params[name] = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=offset).reshape(shape).astype(np.float32)
        expected_offset = offset + size
    if expected_offset != len(payload):
        raise FormatError(f"{root}: {PARAMS} has trailing bytes", expected_offset)
    return meta, params


def check_shapes(expected: dict[str, tuple[int, ...]], loaded: dict[str, np.ndarray], where: str) -> None:
    if list(expected) != list(loaded):
        raise FormatError(f"{where}: parameter manifest does not match the declared architecture")
    for name, shape in expected.items():
        if loaded[name].shape != shape:
            raise FormatError(f"{where}: parameter {name} has shape {loaded[name].shape}, "
                              f"declared config implies {shape}")
