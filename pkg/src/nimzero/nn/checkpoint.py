"""``NIMZ`` checkpoint files.

Layout, all little-endian::

    4 bytes   magic  b"NIMZ"
    u32       format version (1)
    u32       heap count k
    u32 * k   heap capacities
    u32       input size, hidden size, LSTM layers, policy size, value size
    u64       number of parameters
    f32 * n   parameters

Parameters follow the network's ``named_params()`` order: for every LSTM
layer ``w_x (in, 4H)``, ``w_h (H, 4H)``, ``bias (4H)``, then the policy head
``w (H, A)``, ``b (A)`` and the value head ``w (H, 1)``, ``b (1)``; matrices
row-major.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"NIMZ"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ArchDescriptor:
    capacities: tuple[int, ...]
    input_size: int
    hidden_size: int
    layers: int
    policy_size: int
    value_size: int


def write_checkpoint(path, descriptor: ArchDescriptor, flat_params: np.ndarray):
    flat = np.ascontiguousarray(flat_params, dtype="<f4").ravel()
    caps = descriptor.capacities
    header = MAGIC + struct.pack("<II", VERSION, len(caps))
    header += struct.pack(f"<{len(caps)}I", *caps)
    header += struct.pack("<5I", descriptor.input_size, descriptor.hidden_size,
                          descriptor.layers, descriptor.policy_size, descriptor.value_size)
    header += struct.pack("<Q", flat.size)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(flat.tobytes())
    tmp.replace(path)


def read_checkpoint(path) -> tuple[ArchDescriptor, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a NIMZ checkpoint")
    try:
        version, k = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        off = 12
        caps = struct.unpack_from(f"<{k}I", data, off)
        off += 4 * k
        fields = struct.unpack_from("<5I", data, off)
        off += 20
        (n,) = struct.unpack_from("<Q", data, off)
        off += 8
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if len(data) - off != 4 * n:
        raise CheckpointError(f"{path}: expected {n} parameters, file holds {(len(data) - off) // 4}")
    flat = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float32)
    return ArchDescriptor(tuple(caps), *fields), flat
