"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"FITNET" + 2-digit format version      8 bytes
    header length                           uint64
    header                                  UTF-8 JSON, sorted keys
    array count                             uint32
    per array:
        name length                         uint32
        name                                UTF-8
        rank                                uint32
        dims                                uint64 x rank
        data                                float64 x prod(dims)

The header carries the model config, the vocabularies and training
metadata. Loading parses the whole file before building anything, so a
truncated or corrupt file never yields a partially loaded model.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError, VersionError
from .features import Vocabulary
from .model import FitNet, ModelConfig, ModelParams

MAGIC_PREFIX = b"FITNET"
FORMAT_VERSION = 1
MAGIC = MAGIC_PREFIX + f"{FORMAT_VERSION:02d}".encode()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def serialize(model: FitNet, metadata: Mapping | None = None) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "vocabularies": {k: v.values for k, v in sorted(model.vocabs.items())},
        "metadata": dict(metadata or {}),
    }
    head = _canonical(header).encode("utf-8")
    out = [MAGIC, struct.pack("<Q", len(head)), head]
    arrays = model.named_parameters()
    out.append(struct.pack("<I", len(arrays)))
    for name, t in arrays.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", t.data.ndim))
        out.append(struct.pack(f"<{t.data.ndim}Q", *t.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def deserialize(buf: bytes) -> tuple[FitNet, dict]:
    r = _Reader(buf)
    magic = r.take(len(MAGIC), "magic bytes")
    if magic != MAGIC:
        if magic.startswith(MAGIC_PREFIX):
            raise VersionError(
                f"checkpoint format version {magic[len(MAGIC_PREFIX):].decode(errors='replace')!r} "
                f"is not supported (expected {FORMAT_VERSION:02d})"
            )
        raise FormatError("not a checkpoint file (bad magic bytes)", 0)
    (head_len,) = r.unpack("<Q", "header length")
    head_at = r.pos
    try:
        header = json.loads(r.take(head_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("header is not valid UTF-8 JSON", head_at) from None
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"header format_version {header.get('format_version')!r} != {FORMAT_VERSION}")
    (count,) = r.unpack("<I", "array count")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I", "array name length")
        at = r.pos
        try:
            name = r.take(nlen, "array name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("array name is not valid UTF-8", at) from None
        (rank,) = r.unpack("<I", f"rank of {name}")
        if rank > 8:
            raise FormatError(f"implausible rank {rank} for array {name}", r.pos - 4)
        dims = r.unpack(f"<{rank}Q", f"dims of {name}")
        n = int(np.prod(dims)) if rank else 1
        data = r.take(8 * n, f"data of {name}")
        arrays[name] = np.frombuffer(data, dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last array", r.pos)
    try:
        config = ModelConfig.from_dict(header["model_config"])
        vocabs = {k: Vocabulary(k, list(v)) for k, v in header["vocabularies"].items()}
        params = ModelParams.from_arrays(config, arrays)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint content inconsistent: {exc}") from None
    return FitNet(config, vocabs, params), header.get("metadata", {})


def save_checkpoint(model: FitNet, path: str | Path, metadata: Mapping | None = None) -> str:
    """Write ``model`` to ``path``; returns the SHA-256 of the written bytes."""
    data = serialize(model, metadata)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: str | Path) -> tuple[FitNet, dict]:
    data = Path(path).read_bytes()
    model, meta = deserialize(data)
    model.checkpoint_hash = hashlib.sha256(data).hexdigest()
    return model, meta


def describe(path: str | Path) -> dict:
    model, meta = load_checkpoint(path)
    params = model.named_parameters()
    return {
        "format_version": FORMAT_VERSION,
        "sha256": model.checkpoint_hash,
        "model_config": model.config.to_dict(),
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "parameter_count": int(sum(v.size for v in params.values())),
        "vocabulary_sizes": {k: v.size for k, v in sorted(model.vocabs.items())},
        "metadata": meta,
    }
