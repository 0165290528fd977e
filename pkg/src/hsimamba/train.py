"""Training/evaluation orchestration: config parsing, the step-decay AdamW
schedule, seeded repetition, deterministic run logs.

Determinism contract: identical (config, seed, thread count) reproduce the
checkpoint and `runlog.txt` byte for byte. Wall-clock time therefore lives
in a separate `timing.txt` sidecar.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import checkpoint, data, ops
from .model import ConfigError, ModelConfig, build_model
from .optim import AdamW, step_lr
from .tensor import NumericError, Tensor, no_grad

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_BOOL_KEYS = {"euler_discretization", "attn_norm_affine", "feedthrough"}


@dataclass
class TrainConfig:
    model: ModelConfig
    data_path: str = ""
    labels_path: str = ""
    train_fraction: float = 0.1
    train_counts: dict = field(default_factory=dict)   # class id -> count; overrides fraction
    normalization: str = "standardize"
    batch_size: int = 64
    lr: float = 1e-3
    epochs: int = 300
    lr_step: int = 20
    lr_gamma: float = 0.9
    weight_decay: float = 0.01
    seeds: tuple = (0,)
    out_dir: str = "runs/out"

    def validate(self):
        self.model.validate()
        bad = []
        if self.batch_size < 1:
            bad.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if self.epochs < 1:
            bad.append(f"epochs must be >= 1 (got {self.epochs})")
        if not 0.0 < self.lr_gamma <= 1.0:
            bad.append(f"lr_gamma must be in (0,1] (got {self.lr_gamma})")
        if self.lr <= 0:
            bad.append(f"lr must be positive (got {self.lr})")
        if self.lr_step < 1:
            bad.append(f"lr_step must be >= 1 (got {self.lr_step})")
        if not self.seeds:
            bad.append("seeds must not be empty")
        if bad:
            raise ConfigError("invalid train config: " + "; ".join(bad))
        return self

    def split_spec(self):
        if self.train_counts:
            return {"counts": self.train_counts}
        return {"proportion": self.train_fraction}


def parse_config(path):
    """Flat `key = value` text with '#' comments."""
    model_kwargs = {}
    train_kwargs = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in _MODEL_KEYS:
                model_kwargs[key] = _coerce_model_value(key, value)
            elif key in _TRAIN_PARSERS:
                train_kwargs[key] = _TRAIN_PARSERS[key](value)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
    if "bands" not in model_kwargs or "num_classes" not in model_kwargs:
        raise ConfigError(f"{path}: config must set bands and num_classes")
    train_kwargs = {_FIELD_ALIASES.get(k, k): v for k, v in train_kwargs.items()}
    cfg = TrainConfig(model=ModelConfig(**model_kwargs), **train_kwargs)
    return cfg.validate()


def _coerce_model_value(key, value):
    if key in _BOOL_KEYS:
        return value.lower() in ("1", "true", "yes", "on")
    if key in ("spectral_scan", "fusion", "readout", "dt_rank"):
        return value
    return int(value)


def _parse_counts(value):
    counts = {}
    for i, tok in enumerate(value.split(","), 1):
        counts[i] = int(tok.strip())
    return counts


_TRAIN_PARSERS = {
    "data": str,
    "labels": str,
    "train_fraction": float,
    "train_counts": _parse_counts,
    "normalization": str,
    "batch_size": int,
    "lr": float,
    "epochs": int,
    "lr_step": int,
    "lr_gamma": float,
    "weight_decay": float,
    "seeds": lambda v: tuple(int(s.strip()) for s in v.split(",")),
    "out_dir": str,
}
# config keys "data"/"labels" map onto the dataclass field names
_FIELD_ALIASES = {"data": "data_path", "labels": "labels_path"}


@dataclass
class RunLog:
    seed: int
    config_hash: str
    epochs: list = field(default_factory=list)   # (epoch, loss, acc, lr)
    final_metrics: dict = field(default_factory=dict)
    best_epoch: int = 0
    wall_time_s: float = 0.0

    def deterministic_text(self):
        lines = [f"seed={self.seed}", f"config_hash={self.config_hash}"]
        for e, loss, acc, lr in self.epochs:
            lines.append(f"epoch={e} loss={loss:.9g} train_acc={acc:.9g} lr={lr:.9g}")
        lines.append(f"best_epoch={self.best_epoch}")
        for key in sorted(self.final_metrics):
            lines.append(f"final.{key}={self.final_metrics[key]:.9g}")
        return "\n".join(lines) + "\n"


class DivergenceError(RuntimeError):
    pass


def _worker_count():
    raw = os.environ.get("HSIMAMBA_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def assemble_patches(cube, pixels, patch):
    """Stack mirror-padded patches for (r, c, class) pixel triples.

    Reads are independent; with HSIMAMBA_WORKERS > 1 they run on a thread
    pool whose ordered map keeps the result deterministic.
    """
    workers = _worker_count()
    if workers > 1 and len(pixels) > 64:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stacks = list(pool.map(lambda px: data.extract_patch(cube, px[:2], patch), pixels))
    else:
        stacks = [data.extract_patch(cube, px[:2], patch) for px in pixels]
    x = np.stack(stacks).astype(np.float32)
    y = np.array([px[2] - 1 for px in pixels], dtype=np.int64)
    return x, y


def load_dataset(cfg):
    cube = data.load_cube(cfg.data_path, cfg.labels_path)
    if cube.num_classes != cfg.model.num_classes:
        raise ConfigError(
            f"dataset has {cube.num_classes} classes but model expects {cfg.model.num_classes}"
        )
    if cube.bands != cfg.model.bands:
        raise ConfigError(f"dataset has {cube.bands} bands but model expects {cfg.model.bands}")
    return data.normalize(cube, mode=cfg.normalization)


def train_one(cfg, seed, out_dir):
    """One fully-seeded run: split, init, shuffle all derive from `seed`."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    cube = load_dataset(cfg)
    split = data.split_samples(cube.labels, cfg.split_spec(), seed)
    x_train, y_train = assemble_patches(cube, split.train_pixels(), cfg.model.patch)
    n = len(y_train)

    model = build_model(cfg.model, seed=seed)
    optimizer = AdamW(
        list(model.named_parameters()),
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
    )
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x73687566]))
    log = RunLog(seed=seed, config_hash=cfg.model.arch_hash())
    best_loss = np.inf
    best_path = os.path.join(out_dir, "best.ckpt")
    final_path = os.path.join(out_dir, "final.ckpt")

    model.train()
    for epoch in range(1, cfg.epochs + 1):
        optimizer.lr = step_lr(cfg.lr, epoch, cfg.lr_step, cfg.lr_gamma)
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = Tensor(x_train[idx])
            yb = y_train[idx]
            try:
                logits = model(xb)
                loss = ops.cross_entropy(logits, yb)
            except NumericError as e:
                raise DivergenceError(
                    f"numeric blow-up at epoch {epoch}, batch {start // cfg.batch_size}: {e}"
                ) from e
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            epoch_loss += loss_val * len(idx)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
        epoch_loss /= n
        log.epochs.append((epoch, epoch_loss, correct / n, optimizer.lr))
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            log.best_epoch = epoch
            checkpoint.save_model(best_path, model, optimizer)
    checkpoint.save_model(final_path, model, optimizer)

    test_pixels = split.test_pixels()
    if test_pixels:
        cm = _run_inference(model, cube, test_pixels, cfg)
        oa, aa, kappa, _ = data.metrics(cm)
        log.final_metrics = {"oa": oa, "aa": aa, "kappa": kappa}
    log.wall_time_s = time.perf_counter() - t0

    with open(os.path.join(out_dir, "runlog.txt"), "w", encoding="utf-8") as f:
        f.write(log.deterministic_text())
    with open(os.path.join(out_dir, "timing.txt"), "w", encoding="utf-8") as f:
        f.write(f"wall_time_s={log.wall_time_s:.3f}\n")
    return log


def train(cfg):
    """Run every seed in the config; returns the list of RunLogs."""
    cfg.validate()
    logs = []
    for seed in cfg.seeds:
        out_dir = os.path.join(cfg.out_dir, f"seed_{seed}")
        logs.append(train_one(cfg, seed, out_dir))
    if len(logs) > 1:
        _write_aggregate(cfg, logs)
    return logs


def _write_aggregate(cfg, logs):
    keys = ("oa", "aa", "kappa")
    rows = [log.final_metrics for log in logs if log.final_metrics]
    lines = [f"runs={len(logs)}"]
    for key in keys:
        vals = np.array([r[key] for r in rows])
        lines.append(f"{key}.mean={vals.mean():.9g}")
        lines.append(f"{key}.std={vals.std():.9g}")
    with open(os.path.join(cfg.out_dir, "summary.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _run_inference(model, cube, pixels, cfg):
    """Deterministic batched eval-mode inference over pixel triples."""
    was_training = model.training
    model.eval()
    cm = data.ConfusionMatrix.empty(cfg.model.num_classes)
    preds = np.zeros(len(pixels), dtype=np.int64)
    with no_grad():
        for start in range(0, len(pixels), cfg.batch_size):
            chunk = pixels[start:start + cfg.batch_size]
            xb, _ = assemble_patches(cube, chunk, cfg.model.patch)
            logits = model(Tensor(xb))
            pred = logits.data.argmax(axis=1) + 1
            preds[start:start + len(chunk)] = pred
            cm.add([px[2] for px in chunk], pred)
    model.train(was_training)
    return cm


def evaluate(cfg, checkpoint_path, seed=None, map_path=None):
    """Metrics for a checkpoint over the test split of `seed` (default: first).

    Never mutates parameters or running statistics. Optionally renders the
    classification map of every labeled pixel.
    """
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else seed
    cube = load_dataset(cfg)
    split = data.split_samples(cube.labels, cfg.split_spec(), seed)
    model = build_model(cfg.model, seed=seed)
    checkpoint.load_model(checkpoint_path, model)
    model.eval()

    test_pixels = split.test_pixels()
    if not test_pixels:
        raise ConfigError("evaluation split is empty")
    cm = _run_inference(model, cube, test_pixels, cfg)
    oa, aa, kappa, per_class = data.metrics(cm)

    if map_path:
        labeled = list(zip(*np.nonzero(cube.labels)))
        pixels = [(int(r), int(c), int(cube.labels[r, c])) for r, c in labeled]
        pred_map = np.zeros_like(cube.labels, dtype=np.int64)
        with no_grad():
            for start in range(0, len(pixels), cfg.batch_size):
                chunk = pixels[start:start + cfg.batch_size]
                xb, _ = assemble_patches(cube, chunk, cfg.model.patch)
                logits = model(Tensor(xb))
                pred = logits.data.argmax(axis=1) + 1
                for (r, c, _), p in zip(chunk, pred):
                    pred_map[r, c] = p
        data.render_map(map_path, cube.labels.shape, pred_map,
                        data.default_palette(cfg.model.num_classes))
    return cm, {"oa": oa, "aa": aa, "kappa": kappa, "per_class": per_class}
