"""Checkpoint files.

Layout (little-endian)::

    b"CLGC" | version u16 | config_len u32 | config text (utf-8) | step u64
    | param_count u32 | records | rng_len u32 | rng state (json, utf-8) | crc32 u32

    record := name_len u16 | name | rank u8 | dims u32 * rank
              | value f64 * size | adam_m f64 * size | adam_v f64 * size

The CRC covers every byte before it. Writing is deterministic, so
save -> load -> save reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig
from .nn import Param, ParamStore

MAGIC = b"CLGC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    step: int
    params: ParamStore
    rng_state: dict


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config.to_text().encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(cfg)), cfg,
             struct.pack("<QI", int(ckpt.step), len(ckpt.params))]
    for name, p in ckpt.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", p.value.ndim)
                     + struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        for arr in (p.value, p.m, p.v):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    rng = json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(rng)) + rng)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(ckpt: Checkpoint, path):
    blob = checkpoint_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.off = 0

    def take(self, count):
        if self.off + count > len(self.blob):
            raise CheckpointError(f"truncated checkpoint: need {count} bytes at offset {self.off}")
        out = self.blob[self.off:self.off + count]
        self.off += count
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic at offset 0")
    version, cfg_len = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = ModelConfig.from_text(r.take(cfg_len).decode("utf-8"))
    step, count = r.unpack("<QI")
    store = ParamStore()
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        arrays = [np.frombuffer(r.take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
                  for _ in range(3)]
        store.entries[name] = Param(arrays[0], np.zeros_like(arrays[0]), arrays[1], arrays[2])
    (rng_len,) = r.unpack("<I")
    rng_state = json.loads(r.take(rng_len).decode("utf-8"))
    end = r.off
    (stored,) = r.unpack("<I")
    if stored != zlib.crc32(blob[:end]):
        raise CheckpointError(f"checksum mismatch at offset {end}")
    if r.off != len(blob):
        raise CheckpointError(f"trailing bytes after offset {r.off}")
    return Checkpoint(config, int(step), store, rng_state)
