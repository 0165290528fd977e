"""Local-detail stream: parallel spectral (3-tap channel conv) and spatial
(3x3 depthwise) branches fused by a pointwise conv.

The channel conv never mixes spatial positions; the depthwise conv never
mixes channels. Conv kernels carry no bias (it folds into the batch norm).
"""

from __future__ import annotations

import numpy as np

from . import nn, ops
from .tensor import ShapeError


class SpectralBranch(nn.Module):
    """3-tap conv along the band axis -> BN -> SiLU. Kernel has 3 weights."""

    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        self.conv = nn.ChannelConv3(rng, dtype=dtype)
        self.bn = nn.BatchNorm(dim, dtype=dtype)

    def forward(self, x):
        return ops.silu(self.bn(self.conv(x)))


class SpatialBranch(nn.Module):
    """3x3 depthwise conv -> BN -> SiLU. Kernel has 3*3*D weights."""

    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        self.conv = nn.DepthwiseConv2d(dim, 3, rng, bias=False, dtype=dtype)
        self.bn = nn.BatchNorm(dim, dtype=dtype)

    def forward(self, x):
        return ops.silu(self.bn(self.conv(x)))


class PointwiseFuse(nn.Module):
    """Concat branches over channels, 1x1 conv 2D -> D, BN, SiLU."""

    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        self.conv = nn.PointwiseConv(2 * dim, dim, rng, bias=True, dtype=dtype)
        self.bn = nn.BatchNorm(dim, dtype=dtype)

    def forward(self, spe, spa):
        if spe.shape != spa.shape:
            raise ShapeError(f"PointwiseFuse: branch shapes differ {spe.shape} vs {spa.shape}")
        cat = ops.concat([spe, spa], axis=-1)
        return ops.silu(self.bn(self.conv(cat)))


class LocalConvBlock(nn.Module):
    """The full local stream; output shape equals input shape (B,P,P,D)."""

    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        self.spectral = SpectralBranch(dim, rng, dtype=dtype)
        self.spatial = SpatialBranch(dim, rng, dtype=dtype)
        self.fuse = PointwiseFuse(dim, rng, dtype=dtype)

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"LocalConvBlock: expected (B,P,P,D), got {x.shape}")
        out = self.fuse(self.spectral(x), self.spatial(x))
        assert out.shape == x.shape
        return out
