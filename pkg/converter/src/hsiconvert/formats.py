"""HSIC/HSIL binary writers and readers (little-endian).

HSIC cube:  "HSIC", version u32=1, H u32, W u32, B u32, dtype u8=1 (f32),
            3 reserved bytes, payload H*W*B f32 band-fastest.
HSIL label: "HSIL", version u32=1, H u32, W u32, class_count u16, then
            class_count names (u16 length prefix + UTF-8), payload H*W u16.

This mirrors the byte layout the training pipeline consumes; the files are
the interface between the two tools.
"""

from __future__ import annotations

import struct

import numpy as np

CUBE_MAGIC = b"HSIC"
LABEL_MAGIC = b"HSIL"


class FormatError(ValueError):
    pass


def write_cube(path, values):
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 3:
        raise FormatError(f"cube must be (H,W,B), got {values.shape}")
    h, w, b = values.shape
    with open(path, "wb") as f:
        f.write(CUBE_MAGIC)
        f.write(struct.pack("<IIII", 1, h, w, b))
        f.write(struct.pack("<B3x", 1))
        f.write(values.tobytes())


def write_labels(path, labels, class_names):
    labels = np.ascontiguousarray(labels, dtype="<u2")
    if labels.ndim != 2:
        raise FormatError(f"labels must be (H,W), got {labels.shape}")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(struct.pack("<III", 1, h, w))
        f.write(struct.pack("<H", len(class_names)))
        for name in class_names:
            nb = str(name).encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
        f.write(labels.tobytes())


def read_cube(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CUBE_MAGIC:
        raise FormatError(f"{path}: bad cube magic {blob[:4]!r}")
    version, h, w, b = struct.unpack_from("<IIII", blob, 4)
    if version != 1:
        raise FormatError(f"{path}: unsupported cube version {version}")
    if blob[20] != 1:
        raise FormatError(f"{path}: unsupported dtype code {blob[20]}")
    expected = 24 + 4 * h * w * b
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    return np.frombuffer(blob, "<f4", offset=24).reshape(h, w, b).copy()


def read_labels(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != LABEL_MAGIC:
        raise FormatError(f"{path}: bad label magic {blob[:4]!r}")
    version, h, w = struct.unpack_from("<III", blob, 4)
    if version != 1:
        raise FormatError(f"{path}: unsupported label version {version}")
    (count,) = struct.unpack_from("<H", blob, 16)
    off = 18
    names = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        names.append(blob[off:off + nlen].decode("utf-8"))
        off += nlen
    expected = off + 2 * h * w
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    labels = np.frombuffer(blob, "<u2", count=h * w, offset=off).reshape(h, w)
    return labels.copy(), names
