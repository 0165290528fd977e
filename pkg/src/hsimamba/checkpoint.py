"""DMCK binary checkpoint container.

Layout (little-endian): magic "DMCK", version u32, entry count u32; each
entry = name length u16, UTF-8 name, rank u8, extents u32 each, f32
payload. Model parameters and buffers are stored under their hierarchical
names; optimizer state and metadata live under the reserved "__opt__/" and
"__meta__/" prefixes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DMCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def write_entries(path, entries):
    """entries: ordered (name, float32-coercible ndarray) pairs."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries:
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            f.write(arr.tobytes())


def read_entries(path):
    """Returns the ordered list of (name, float32 ndarray) pairs."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(shape)) if shape else 1
        nbytes = 4 * n
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload for entry {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += nbytes
        entries.append((name, arr.copy()))
    return entries


def _hash_array(hex_digest):
    return np.frombuffer(bytes.fromhex(hex_digest), dtype=np.uint8).astype(np.float32)


def save_model(path, model, optimizer=None):
    entries = []
    entries.append(("__meta__/config_hash", _hash_array(model.config.arch_hash())))
    for name, p in model.named_parameters():
        entries.append((name, p.data))
    for name, b in model.named_buffers():
        entries.append((f"__buf__/{name}", b))
    if optimizer is not None:
        entries.extend(optimizer.state_entries())
    write_entries(path, entries)


def load_model(path, model, optimizer=None):
    entries = read_entries(path)
    table = dict(entries)
    stored = table.get("__meta__/config_hash")
    if stored is None:
        raise CheckpointError(f"{path}: missing architecture hash")
    if not np.array_equal(stored, _hash_array(model.config.arch_hash())):
        raise CheckpointError(f"{path}: checkpoint architecture does not match the model config")
    for name, p in model.named_parameters():
        if name not in table:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        arr = table[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: parameter {name!r} shape {arr.shape} != {p.shape}")
        p.data = np.ascontiguousarray(arr.astype(p.dtype))
    for name, b in model.named_buffers():
        key = f"__buf__/{name}"
        if key not in table:
            raise CheckpointError(f"{path}: missing buffer {name!r}")
        arr = table[key]
        if arr.shape != b.shape:
            raise CheckpointError(f"{path}: buffer {name!r} shape {arr.shape} != {b.shape}")
        b[...] = arr
    if optimizer is not None:
        optimizer.load_state_entries(entries)
    return model
