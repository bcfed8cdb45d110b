"""Binary parameter checkpoints ("FFNN").

Layout, little-endian: b"FFNN", u32 version, u32 tensor count, then per
tensor u32 name length, utf-8 name, u32 rank, rank x u32 dims, float32 data.
Batch-norm running statistics are stored alongside parameters under
their dotted names.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FFNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def state_dict(net) -> dict[str, np.ndarray]:
    out = {name: value for name, _, _, value in net.named_params()}
    out.update({name: value for name, _, _, value in net.named_buffers()})
    return out


def save_checkpoint(net, path) -> None:
    tensors = state_dict(net)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(tensors)))
        for name, value in tensors.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(value, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError("not an FFNN checkpoint")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float64)
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors


def load_checkpoint(net, path):
    """Copy tensors from ``path`` into ``net``; names and shapes must match exactly."""
    tensors = read_checkpoint(path)
    slots = {name: (layer, key, store) for store in ("params", "buffers")
             for name, layer, key, _ in getattr(net, f"named_{store}")()}
    missing = set(slots) - set(tensors)
    extra = set(tensors) - set(slots)
    if missing or extra:
        raise CheckpointError(f"tensor names differ (missing {sorted(missing)}, unexpected {sorted(extra)})")
    for name, (layer, key, store) in slots.items():
        target = getattr(layer, store)
        if target[key].shape != tensors[name].shape:
            raise CheckpointError(f"{name}: shape {tensors[name].shape} != {target[key].shape}")
        target[key] = tensors[name]
    net.zero_grad()
    return net
