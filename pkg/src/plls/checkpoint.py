"""Self-describing binary checkpoint container.

Layout: magic ``PLLS``, u32 format version, u32 descriptor length +
UTF-8 JSON architecture descriptor, then one length-prefixed (u64 count)
little-endian float64 buffer per parameter tensor in declaration order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"PLLS"
VERSION = 1


class CheckpointError(RuntimeError):
    """Malformed or incompatible checkpoint file."""


def save_params(path, descriptor, params):
    blob = json.dumps(descriptor).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            data = np.ascontiguousarray(p.data, dtype="<f8")
            fh.write(struct.pack("<Q", data.size))
            fh.write(data.tobytes())


def load_params(path):
    """Return (descriptor dict, list of flat float arrays)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (dlen,) = struct.unpack_from("<I", raw, 8)
    try:
        descriptor = json.loads(raw[12 : 12 + dlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt descriptor: {exc}")
    offset = 12 + dlen
    buffers = []
    while offset < len(raw):
        if offset + 8 > len(raw):
            raise CheckpointError(f"{path}: truncated buffer header")
        (count,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated parameter buffer")
        buffers.append(
            np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(
                np.float64
            )
        )
        offset += nbytes
    return descriptor, buffers


def assign_params(params, buffers):
    if len(params) != len(buffers):
        raise CheckpointError(
            f"parameter count mismatch: model has {len(params)}, file has {len(buffers)}"
        )
    for p, buf in zip(params, buffers):
        if p.size != buf.size:
            raise CheckpointError(
                f"parameter size mismatch: {p.shape} vs {buf.size} values"
            )
        p.data[...] = buf.reshape(p.shape)
