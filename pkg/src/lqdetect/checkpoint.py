"""Binary checkpoint format.

Layout: magic "HVAE", u32 version, u32 JSON length, canonical-JSON header
(config + training metadata), u32 tensor count, then per tensor sorted by
name: u32 name length, name bytes, u32 rank, u32 extents, raw
little-endian float64 data. Round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .hvae import HvaeCheckpoint, HvaeConfig
from .util import atomic_write_bytes, canonical_json

MAGIC = b"HVAE"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(ckpt: HvaeCheckpoint) -> bytes:
    header = canonical_json({"config": ckpt.config.to_dict(), "meta": ckpt.meta}).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(header)), header,
           struct.pack("<I", len(ckpt.params))]
    for name in sorted(ckpt.params):
        # note: ascontiguousarray would promote 0-d scalars to 1-d
        arr = np.asarray(ckpt.params[name], dtype="<f8")
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(blob: bytes) -> HvaeCheckpoint:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(blob[pos:pos + hlen].decode())
    pos += hlen
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode()
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape)
        params[name] = arr.astype(np.float64).copy()
        pos += 8 * n
    if pos != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    return HvaeCheckpoint(config=HvaeConfig.from_dict(header["config"]),
                          params=params, meta=header["meta"])


def save(ckpt: HvaeCheckpoint, path) -> None:
    atomic_write_bytes(path, dumps(ckpt))


def load(path) -> HvaeCheckpoint:
    with open(path, "rb") as f:
        return loads(f.read())
