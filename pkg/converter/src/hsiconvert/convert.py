"""MATLAB raster -> HSIC/HSIL conversion with integrity checks."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import formats


class ConversionError(RuntimeError):
    pass


def load_mat_array(path, key):
    """Named array from a .mat file, v5 (scipy) or v7.3 (HDF5 via h5py)."""
    import scipy.io

    try:
        table = scipy.io.loadmat(path)
        arrays = {k: v for k, v in table.items() if not k.startswith("__")}
        if key not in arrays:
            raise ConversionError(
                f"{path}: no array named {key!r}; available: {sorted(arrays)}"
            )
        return np.asarray(arrays[key])
    except NotImplementedError:
        pass  # v7.3: MATLAB stores as HDF5
    import h5py

    with h5py.File(path, "r") as f:
        keys = list(f.keys())
        if key not in f:
            raise ConversionError(f"{path}: no array named {key!r}; available: {sorted(keys)}")
        arr = np.asarray(f[key])
    # MATLAB is column-major, so HDF5 exposes reversed axes
    return arr.transpose(range(arr.ndim - 1, -1, -1))


def parse_band_list(text):
    """1-based inclusive band ranges, e.g. "1-103,109-149,164-219"."""
    indices = []
    for tok in text.split(","):
        tok = tok.strip()
        if "-" in tok:
            lo, hi = (int(p) for p in tok.split("-", 1))
            if lo < 1 or hi < lo:
                raise ConversionError(f"bad band range {tok!r}")
            indices.extend(range(lo - 1, hi))
        else:
            v = int(tok)
            if v < 1:
                raise ConversionError(f"bad band index {tok!r}")
            indices.append(v - 1)
    return indices


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class ConversionManifest:
    data_source: str
    gt_source: str
    data_key: str
    gt_key: str
    cube_path: str
    label_path: str
    height: int = 0
    width: int = 0
    bands: int = 0
    num_classes: int = 0
    labeled_pixels: int = 0
    digests: dict = field(default_factory=dict)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")


def convert(data_mat, gt_mat, data_key, gt_key, out_prefix, bands=None, class_names=None):
    """Emit <out_prefix>.hsic/.hsil from the named MATLAB arrays."""
    data = load_mat_array(data_mat, data_key)
    gt = load_mat_array(gt_mat, gt_key)
    if data.ndim != 3:
        raise ConversionError(f"{data_mat}:{data_key} must be rank 3, got shape {data.shape}")
    if gt.ndim != 2:
        raise ConversionError(f"{gt_mat}:{gt_key} must be rank 2, got shape {gt.shape}")
    if gt.shape != data.shape[:2]:
        raise ConversionError(
            f"ground truth {gt.shape} does not match cube spatial dims {data.shape[:2]}"
        )
    if not np.issubdtype(gt.dtype, np.integer):
        if not np.array_equal(gt, np.round(gt)):
            raise ConversionError(f"{gt_mat}:{gt_key} holds non-integer labels")
        gt = np.round(gt)
    if gt.min() < 0 or gt.max() > np.iinfo(np.uint16).max:
        raise ConversionError(f"label values outside u16 range: [{gt.min()}, {gt.max()}]")

    if bands is not None:
        idx = parse_band_list(bands) if isinstance(bands, str) else list(bands)
        if max(idx) >= data.shape[2]:
            raise ConversionError(
                f"band index {max(idx) + 1} exceeds {data.shape[2]} available bands"
            )
        data = data[:, :, idx]

    labels = gt.astype(np.uint16)
    num_classes = int(labels.max())
    if class_names is None:
        class_names = [f"class_{k}" for k in range(1, num_classes + 1)]
    elif len(class_names) < num_classes:
        raise ConversionError(f"{len(class_names)} names given for {num_classes} classes")

    cube_path = f"{out_prefix}.hsic"
    label_path = f"{out_prefix}.hsil"
    formats.write_cube(cube_path, data.astype(np.float32))
    formats.write_labels(label_path, labels, class_names)

    manifest = ConversionManifest(
        data_source=os.path.abspath(data_mat),
        gt_source=os.path.abspath(gt_mat),
        data_key=data_key,
        gt_key=gt_key,
        cube_path=os.path.abspath(cube_path),
        label_path=os.path.abspath(label_path),
        height=int(data.shape[0]),
        width=int(data.shape[1]),
        bands=int(data.shape[2]),
        num_classes=num_classes,
        labeled_pixels=int((labels > 0).sum()),
        digests={cube_path: _sha256(cube_path), label_path: _sha256(label_path)},
    )
    manifest.save(f"{out_prefix}.manifest.json")
    return manifest


def verify(out_prefix):
    """Re-parse emitted files and produce the per-class count report.

    Returns (report_text, stats_dict); raises on any integrity failure.
    """
    cube_path = f"{out_prefix}.hsic"
    label_path = f"{out_prefix}.hsil"
    values = formats.read_cube(cube_path)
    labels, names = formats.read_labels(label_path)
    if labels.shape != values.shape[:2]:
        raise ConversionError(
            f"label raster {labels.shape} does not match cube dims {values.shape[:2]}"
        )
    manifest_path = f"{out_prefix}.manifest.json"
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as f:
            recorded = json.load(f)["digests"]
        for path, digest in recorded.items():
            actual = _sha256(path)
            if actual != digest:
                raise ConversionError(f"{path}: digest mismatch (recorded {digest[:12]}..., "
                                      f"recomputed {actual[:12]}...)")

    counts = {k: int((labels == k).sum()) for k in range(1, len(names) + 1)}
    total = sum(counts.values())
    lines = [
        f"cube: {values.shape[0]}x{values.shape[1]}x{values.shape[2]} "
        f"({'finite' if np.all(np.isfinite(values)) else 'NON-FINITE VALUES'})",
        f"{'class':>5}  {'name':<32}{'pixels':>10}",
    ]
    for k, name in enumerate(names, 1):
        lines.append(f"{k:>5}  {name:<32}{counts[k]:>10}")
    lines.append(f"{'':>5}  {'total labeled':<32}{total:>10}")
    if total == 0:
        lines.append("warning: no labeled pixels")
    stats = {
        "height": values.shape[0],
        "width": values.shape[1],
        "bands": values.shape[2],
        "labeled": total,
        "per_class": counts,
    }
    return "\n".join(lines), stats
