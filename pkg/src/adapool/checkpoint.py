"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"ADPL"                    magic
    version
    header length, header      UTF-8 JSON: spec, config, epoch, step,
                               rng state, optimizer state, parameter names
    tensor count
    per tensor: rank, extents[rank], float64 little-endian data

JSON is written with sorted keys and no whitespace, so saving a loaded
checkpoint reproduces the original bytes.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkSpec

MAGIC = b"ADPL"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: dict
    epoch: int = 0
    step: int = 0
    config: dict = None
    rng_state: dict = None
    optimizer: dict = field(default_factory=dict)

    def copy(self):
        return Checkpoint(self.spec, {k: v.copy() for k, v in self.params.items()},
                          self.epoch, self.step,
                          None if self.config is None else dict(self.config),
                          json.loads(json.dumps(self.rng_state)),
                          dict(self.optimizer))


def dumps(ckpt):
    header = {
        "spec": ckpt.spec.to_dict(),
        "config": ckpt.config,
        "epoch": int(ckpt.epoch),
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "optimizer": ckpt.optimizer,
        "parameters": list(ckpt.params),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(hbytes)), hbytes,
             struct.pack("<I", len(ckpt.params))]
    for value in ckpt.params.values():
        arr = np.ascontiguousarray(value, dtype="<f8")
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedError("unexpected end of data")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def loads(data):
    r = _Reader(bytes(data))
    if len(data) >= 4 and r.take(4) != MAGIC:
        raise BadMagicError("bad magic")
    if len(data) < 4:
        raise TruncatedError("unexpected end of data")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, expected {VERSION}")
    header = json.loads(r.take(r.u32()).decode("utf-8"))
    count = r.u32()
    names = header["parameters"]
    if count != len(names):
        raise CheckpointError(f"header lists {len(names)} tensors, file has {count}")
    params = {}
    for name in names:
        rank = r.u32()
        shape = r.u32(rank) if rank > 1 else ((r.u32(),) if rank == 1 else ())
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return Checkpoint(
        spec=NetworkSpec.from_dict(header["spec"]),
        params=params,
        epoch=header["epoch"],
        step=header["step"],
        config=header["config"],
        rng_state=header["rng_state"],
        optimizer=header["optimizer"],
    )


def save_checkpoint(ckpt, path):
    with open(path, "wb") as f:
        f.write(dumps(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return loads(f.read())
