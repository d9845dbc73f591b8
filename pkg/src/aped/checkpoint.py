"""Checkpoint serialization for named parameter tensors.

Binary layout: magic "APEDCKPT", one version byte, uint32 entry count, then
per entry (sorted by name): uint32 name length, UTF-8 name, uint32 rank,
uint32 per shape dim, float64 little-endian payload in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"APEDCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(entries: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 5 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = blob[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = len(MAGIC) + 1
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
        offset += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        payload = blob[offset : offset + 8 * n]
        if len(payload) != 8 * n:
            raise CheckpointError(f"{path}: truncated payload for entry {name!r}")
        offset += 8 * n
        entries[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return entries
