"""Hyperspectral cube I/O, preprocessing, sampling splits, metrics, maps.

Binary formats (little-endian):
  HSIC cube:  magic "HSIC", version u32=1, H u32, W u32, B u32, dtype u8=1
              (f32), 3 reserved bytes, payload H*W*B f32, band-fastest.
  HSIL label: magic "HSIL", version u32=1, H u32, W u32, class_count u16,
              class_count names (u16 length prefix + UTF-8), payload H*W u16.
Labels are 1-indexed; 0 marks unlabeled pixels.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

CUBE_MAGIC = b"HSIC"
LABEL_MAGIC = b"HSIL"


class FormatError(ValueError):
    """Malformed HSIC/HSIL payload."""


@dataclass
class HsiCube:
    values: np.ndarray            # (H, W, B) float32
    labels: np.ndarray            # (H, W) uint16, 0 = unlabeled
    class_names: list

    def __post_init__(self):
        if self.values.ndim != 3:
            raise FormatError(f"cube values must be (H,W,B), got {self.values.shape}")
        if self.labels.shape != self.values.shape[:2]:
            raise FormatError(
                f"label raster {self.labels.shape} does not match cube {self.values.shape[:2]}"
            )
        if self.labels.max(initial=0) > len(self.class_names):
            raise FormatError(
                f"label id {int(self.labels.max())} exceeds {len(self.class_names)} class names"
            )
        if not np.all(np.isfinite(self.values)):
            raise FormatError("cube contains non-finite reflectance values")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def bands(self):
        return self.values.shape[2]

    @property
    def num_classes(self):
        return len(self.class_names)


def write_cube(path, values):
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 3:
        raise FormatError(f"cube must be (H,W,B), got {values.shape}")
    h, w, b = values.shape
    with open(path, "wb") as f:
        f.write(CUBE_MAGIC)
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<III", h, w, b))
        f.write(struct.pack("<B3x", 1))
        f.write(values.tobytes())


def read_cube_values(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CUBE_MAGIC:
        raise FormatError(f"{path}: bad cube magic {blob[:4]!r}")
    version, h, w, b = struct.unpack_from("<IIII", blob, 4)
    if version != 1:
        raise FormatError(f"{path}: unsupported cube version {version}")
    dtype_code = blob[20]
    if dtype_code != 1:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code}")
    expected = 24 + 4 * h * w * b
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    vals = np.frombuffer(blob, dtype="<f4", count=h * w * b, offset=24)
    return vals.reshape(h, w, b).copy()


def write_labels(path, labels, class_names):
    labels = np.ascontiguousarray(labels, dtype="<u2")
    if labels.ndim != 2:
        raise FormatError(f"labels must be (H,W), got {labels.shape}")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<II", h, w))
        f.write(struct.pack("<H", len(class_names)))
        for name in class_names:
            nb = str(name).encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
        f.write(labels.tobytes())


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
    labels = np.frombuffer(blob, dtype="<u2", count=h * w, offset=off).reshape(h, w)
    return labels.copy(), names


def load_cube(data_path, label_path):
    values = read_cube_values(data_path)
    labels, names = read_labels(label_path)
    if labels.shape != values.shape[:2]:
        raise FormatError(
            f"label raster {labels.shape} does not match cube dims {values.shape[:2]}"
        )
    return HsiCube(values=values, labels=labels, class_names=names)


def normalize(cube, mode="standardize"):
    """Per-band normalization over all pixels; returns a new cube.

    standardize: zero mean, unit variance. minmax: [0, 1] range.
    Degenerate (constant) bands go to zero with a warning.
    """
    v = cube.values.astype(np.float64)
    flat = v.reshape(-1, cube.bands)
    if mode == "standardize":
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        dead = std == 0
        if np.any(dead):
            warnings.warn(f"{int(dead.sum())} zero-variance band(s) set to zero")
        std = np.where(dead, 1.0, std)
        out = (v - mean) / std
        out[..., dead] = 0.0
    elif mode == "minmax":
        lo = flat.min(axis=0)
        hi = flat.max(axis=0)
        dead = hi == lo
        if np.any(dead):
            warnings.warn(f"{int(dead.sum())} constant band(s) set to zero")
        span = np.where(dead, 1.0, hi - lo)
        out = (v - lo) / span
        out[..., dead] = 0.0
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    return HsiCube(values=out.astype(np.float32), labels=cube.labels, class_names=cube.class_names)


def _reflect_index(i, n):
    # mirror about the border without repeating the edge sample: -1 -> 1
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def extract_patch(cube, pixel, patch):
    """(patch, patch, B) window centered at pixel, mirror-padded at borders."""
    if patch % 2 == 0:
        raise ValueError(f"patch size must be odd, got {patch}")
    r, c = pixel
    h, w = cube.height, cube.width
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"pixel {pixel} outside {h}x{w} raster")
    half = patch // 2
    if half <= r < h - half and half <= c < w - half:
        return cube.values[r - half:r + half + 1, c - half:c + half + 1, :]
    rows = np.array([_reflect_index(r + dr, h) for dr in range(-half, half + 1)])
    cols = np.array([_reflect_index(c + dc, w) for dc in range(-half, half + 1)])
    return cube.values[np.ix_(rows, cols)]


@dataclass
class SampleSplit:
    train: dict = field(default_factory=dict)   # class id -> list of (r, c)
    test: dict = field(default_factory=dict)
    seed: int = 0

    def train_pixels(self):
        return [(r, c, k) for k, px in sorted(self.train.items()) for r, c in px]

    def test_pixels(self):
        return [(r, c, k) for k, px in sorted(self.test.items()) for r, c in px]


def split_samples(labels, spec, seed):
    """Stratified per-class sampling without replacement.

    spec: {"proportion": p} with ceil rounding (at least 1 per class), or
    {"counts": {class_id: n}} for fixed per-class training sizes.
    Deterministic for a given (labels, spec, seed).
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x73706C69]))
    split = SampleSplit(seed=int(seed))
    class_ids = sorted(int(k) for k in np.unique(labels) if k != 0)
    for k in class_ids:
        rows, cols = np.nonzero(labels == k)
        order = rng.permutation(len(rows))
        pixels = [(int(rows[i]), int(cols[i])) for i in order]
        if len(pixels) < 2:
            warnings.warn(f"class {k} has {len(pixels)} labeled pixel(s); train-only")
            split.train[k] = pixels
            split.test[k] = []
            continue
        if "proportion" in spec:
            p = float(spec["proportion"])
            if not 0.0 < p < 1.0:
                raise ValueError(f"proportion must be in (0,1), got {p}")
            n_train = max(1, int(np.ceil(p * len(pixels))))
        else:
            counts = spec["counts"]
            if k not in counts:
                raise ValueError(f"no training count given for class {k}")
            n_train = int(counts[k])
            if n_train > len(pixels):
                raise ValueError(f"class {k}: requested {n_train} > {len(pixels)} available")
        n_train = min(n_train, len(pixels) - 1)  # keep every 2+ class in both sets
        split.train[k] = pixels[:n_train]
        split.test[k] = pixels[n_train:]
    return split


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K); rows reference, columns prediction

    @classmethod
    def empty(cls, num_classes):
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    def add(self, reference, prediction):
        """Accumulate 1-indexed reference/prediction label pairs."""
        ref = np.asarray(reference, dtype=np.int64) - 1
        pred = np.asarray(prediction, dtype=np.int64) - 1
        k = self.counts.shape[0]
        if ref.min(initial=0) < 0 or ref.max(initial=0) >= k:
            raise ValueError("reference label outside 1..K")
        if pred.min(initial=0) < 0 or pred.max(initial=0) >= k:
            raise ValueError("prediction label outside 1..K")
        np.add.at(self.counts, (ref, pred), 1)

    @property
    def total(self):
        return int(self.counts.sum())


def metrics(cm):
    """(OA, AA, kappa, per-class accuracy) from a confusion matrix."""
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    oa = np.trace(counts) / total
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    present = row > 0
    per_class = np.full(counts.shape[0], np.nan)
    per_class[present] = np.diag(counts)[present] / row[present]
    aa = per_class[present].mean()
    # single division on integer terms keeps hand-checkable cases exact
    chance = int((row * col).sum())
    denom = int(total) * int(total) - chance
    kappa = 1.0 if denom == 0 else (int(total) * int(np.trace(counts)) - chance) / denom
    return float(oa), float(aa), float(kappa), per_class


def default_palette(num_classes):
    """Deterministic distinct colors, one RGB triple per class."""
    palette = []
    for k in range(num_classes):
        hue = (k * 0.6180339887498949) % 1.0
        palette.append(_hsv_to_rgb(hue, 0.65 if k % 2 else 0.95, 0.95))
    return palette


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return tuple(int(round(255 * x)) for x in rgb)


def render_map(path, shape, predictions, palette, mask=None):
    """Write a binary PPM (P6) classification map.

    predictions: (H, W) of 1-indexed class ids; masked or zero entries paint
    black. palette: list of RGB triples indexed by class id - 1.
    """
    h, w = shape
    pred = np.asarray(predictions)
    if pred.shape != (h, w):
        raise ValueError(f"predictions shape {pred.shape} != raster {shape}")
    if mask is None:
        mask = pred > 0
    hi = pred[mask].max(initial=0)
    if hi > len(palette):
        raise ValueError(f"class id {int(hi)} outside palette of {len(palette)} colors")
    img = np.zeros((h, w, 3), dtype=np.uint8)
    for k in range(1, len(palette) + 1):
        img[(pred == k) & mask] = palette[k - 1]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def make_synthetic_cube(height=32, width=32, bands=16, num_classes=4, noise=0.25, seed=0):
    """Spatially-blocked classes with distinct smooth spectra plus noise.

    Signatures are unit-energy sinusoid mixtures whose pairwise distance,
    against the given noise sigma, puts the Bayes error well under 0.1%.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x73796E74]))
    t = np.linspace(0.0, 1.0, bands)
    signatures = []
    for k in range(num_classes):
        sig = (
            np.sin(2 * np.pi * ((k + 1) * 0.9) * t + 0.7 * k)
            + 0.5 * np.cos(2 * np.pi * ((k + 2) * 0.45) * t)
        )
        sig = sig / np.linalg.norm(sig) * np.sqrt(bands)
        signatures.append(sig)
    signatures = np.stack(signatures)

    labels = np.zeros((height, width), dtype=np.uint16)
    rows = np.linspace(0, height, 3).astype(int)
    cols = np.linspace(0, width, (num_classes + 1) // 2 + 1).astype(int)
    k = 0
    for ri in range(2):
        for ci in range(len(cols) - 1):
            if k >= num_classes:
                break
            labels[rows[ri]:rows[ri + 1], cols[ci]:cols[ci + 1]] = k + 1
            k += 1
    values = signatures[np.maximum(labels, 1) - 1].astype(np.float64)
    values += rng.normal(0.0, noise, size=values.shape)
    names = [f"class_{k + 1}" for k in range(num_classes)]
    return HsiCube(values=values.astype(np.float32), labels=labels, class_names=names)
