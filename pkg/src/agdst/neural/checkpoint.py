"""Binary checkpoint format.

Layout (little-endian): 8-byte magic, u32 version, u32 header length, JSON
header, then per tensor: u16 name length, name, u8 rank, u32 dims, float32
data, and finally an 8-byte end marker.  Files are written to a temporary
path and renamed, so readers never see a partial checkpoint.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, param_shapes

MAGIC = b"AGDSTCKP"
END = b"AGDSTEND"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointVocabError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab_hash: str
    optimizer: dict | None = None
    extra: dict = field(default_factory=dict)


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "model": ckpt.config.to_json(),
        "vocab_hash": ckpt.vocab_hash,
        "optimizer": ckpt.optimizer,
        "extra": ckpt.extra,
        "tensors": len(ckpt.params),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb]
    for name, arr in ckpt.params.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(END)
    return b"".join(parts)


def save(path, ckpt: Checkpoint) -> bytes:
    data = to_bytes(ckpt)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return data


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes, expected_vocab_hash: str | None = None) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = r.unpack("<II")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
        raise CheckpointVocabError(
            f"checkpoint vocab hash {header['vocab_hash'][:12]} does not match {expected_vocab_hash[:12]}"
        )
    config = ModelConfig.from_json(header["model"])
    dt = config.np_dtype
    params = {}
    for _ in range(header["tensors"]):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        params[name] = arr.astype(dt)
    if r.take(len(END)) != END:
        raise CheckpointTruncatedError("missing end marker")
    expected = param_shapes(config)
    if {n: p.shape for n, p in params.items()} != expected:
        raise CheckpointError("tensor names or shapes do not match the model config")
    return Checkpoint(config, params, header["vocab_hash"], header["optimizer"], header["extra"])


def load(path, expected_vocab_hash: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    return from_bytes(data, expected_vocab_hash)
