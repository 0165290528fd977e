"""Global-local feature fusion strategies and the linear classifier head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, ops
from .tensor import ShapeError, Tensor


@dataclass
class FusionWeights:
    """Per-sample gate: w_global in (0,1), w_local = 1 - w_global exactly."""

    w_global: np.ndarray
    w_local: np.ndarray

    def __post_init__(self):
        if not np.array_equal(self.w_local, 1.0 - self.w_global):
            raise ValueError("fusion weights must satisfy w_local == 1 - w_global")
        if np.any(self.w_global <= 0.0) or np.any(self.w_global >= 1.0):
            raise ValueError("w_global must lie strictly inside (0,1)")


class AdaptiveFusion(nn.Module):
    """Sample-dependent gate from pooled G+L through a squeeze MLP.

    F = G + L + w_g*G + (1-w_g)*L with w_g = sigmoid(z), z one scalar per
    sample from D -> D/2 -> 1.
    """

    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        if dim % 2:
            raise ValueError(f"AdaptiveFusion: dim {dim} must be even")
        self.squeeze = nn.Linear(dim, dim // 2, rng, dtype=dtype)
        self.bn = nn.BatchNorm(dim // 2, dtype=dtype)
        self.gate = nn.Linear(dim // 2, 1, rng, dtype=dtype)

    def forward(self, g, l):
        if g.shape != l.shape:
            raise ShapeError(f"AdaptiveFusion: shapes differ {g.shape} vs {l.shape}")
        base = ops.add(g, l)
        pooled = ops.avg_pool_spatial(base)  # (B, D)
        z = self.gate(ops.relu(self.bn(self.squeeze(pooled))))  # (B, 1)
        w_g = ops.sigmoid(z)
        w_g4 = ops.reshape(w_g, (g.shape[0], 1, 1, 1))
        one = Tensor(np.ones_like(w_g4.data))
        w_l4 = ops.sub(one, w_g4)
        fused = ops.add(base, ops.add(ops.mul(w_g4, g), ops.mul(w_l4, l)))
        weights = FusionWeights(
            w_global=w_g.data.reshape(-1).copy(),
            w_local=1.0 - w_g.data.reshape(-1),
        )
        return fused, weights


STRATEGIES = ("sum", "concat_linear", "learnable", "adaptive")


class GlobalLocalFusion(nn.Module):
    """Strategy dispatch over the Table-of-variants fusion rules."""

    def __init__(self, dim, strategy, rng, dtype=np.float32):
        super().__init__()
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown fusion strategy {strategy!r}; have {STRATEGIES}")
        self.strategy = strategy
        self.last_weights = None
        if strategy == "concat_linear":
            self.mix = nn.PointwiseConv(2 * dim, dim, rng, bias=True, dtype=dtype)
        elif strategy == "learnable":
            self.alpha = Tensor(np.ones(1, dtype=dtype), requires_grad=True)
            self.beta = Tensor(np.ones(1, dtype=dtype), requires_grad=True)
        elif strategy == "adaptive":
            self.adaptive = AdaptiveFusion(dim, rng, dtype=dtype)

    def forward(self, g, l):
        if g.shape != l.shape:
            raise ShapeError(f"fusion: shapes differ {g.shape} vs {l.shape}")
        if self.strategy == "sum":
            return ops.add(g, l)
        if self.strategy == "concat_linear":
            return self.mix(ops.concat([g, l], axis=-1))
        if self.strategy == "learnable":
            return ops.add(ops.mul(_expand_scalar(self.alpha, g), g),
                           ops.mul(_expand_scalar(self.beta, g), l))
        fused, weights = self.adaptive(g, l)
        self.last_weights = weights
        return fused


def _expand_scalar(s, like):
    return ops.reshape(s, (1,) * like.ndim)


class Classifier(nn.Module):
    """Pool the fused patch feature and map it to class logits."""

    def __init__(self, dim, num_classes, rng, readout="gap", dtype=np.float32):
        super().__init__()
        if readout not in ("gap", "center"):
            raise ValueError(f"unknown readout {readout!r}")
        self.readout = readout
        self.head = nn.Linear(dim, num_classes, rng, dtype=dtype)

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"Classifier: expected (B,P,P,D), got {x.shape}")
        pooled = ops.avg_pool_spatial(x) if self.readout == "gap" else ops.take_center(x)
        return self.head(pooled)
