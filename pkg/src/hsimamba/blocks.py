"""Global-context stream: positional conv, spatial and spectral scan blocks,
and the cross-attention feature fusion that joins them.

All features are channel-last patches (B, P, P, D); the spectral path works
on the center pixel only and returns (B, 1, 1, D).
"""

from __future__ import annotations

import numpy as np

from . import nn, ops
from .ssm import (
    ORDER_SPATIAL_ROW_MAJOR,
    ORDER_SPECTRAL_FORWARD,
    ORDER_SPECTRAL_REVERSED,
    ScanSequence,
    SelectiveSSM,
)
from .tensor import ShapeError


def _check_patch(x, name):
    if x.ndim != 4 or x.shape[1] != x.shape[2]:
        raise ShapeError(f"{name}: expected (B,P,P,D), got {x.shape}")


class PositionalConv(nn.Module):
    """Input-dependent positional encoding: a 3x3 depthwise conv.

    Callers form x + dpe(x); the conv itself never mixes channels.
    """

    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        self.conv = nn.DepthwiseConv2d(dim, 3, rng, bias=True, dtype=dtype)

    def forward(self, x):
        _check_patch(x, "PositionalConv")
        return self.conv(x)


def spatial_scan(x):
    """Row-major pixel-by-pixel flattening: (B,P,P,C) -> tagged (B,P*P,C)."""
    _check_patch(x, "spatial_scan")
    B, P, _, C = x.shape
    return ScanSequence(ops.reshape(x, (B, P * P, C)), ORDER_SPATIAL_ROW_MAJOR)


def spatial_unflatten(tokens, patch):
    """Inverse of spatial_scan."""
    B, L, C = tokens.shape
    if L != patch * patch:
        raise ShapeError(f"spatial_unflatten: {L} tokens do not fill a {patch}x{patch} grid")
    return ops.reshape(tokens, (B, patch, patch, C))


class SpatialMambaBlock(nn.Module):
    """Unidirectional row-major scan over the patch at expanded width.

    norm -> expand D -> D_ssm -> scan -> norm -> project back -> residual.
    """

    def __init__(self, dim, n_state, ssm_ratio, rng, dt_rank="auto", euler=False,
                 feedthrough=False, dtype=np.float32):
        super().__init__()
        self.dim = dim
        d_ssm = ssm_ratio * dim
        self.norm_in = nn.LayerNorm(dim, dtype=dtype)
        self.expand = nn.Linear(dim, d_ssm, rng, dtype=dtype)
        self.ssm = SelectiveSSM(d_ssm, n_state, rng, dt_rank=dt_rank, euler=euler,
                                feedthrough=feedthrough, dtype=dtype)
        self.norm_out = nn.LayerNorm(d_ssm, dtype=dtype)
        self.project = nn.Linear(d_ssm, dim, rng, dtype=dtype)

    def forward(self, x_pos):
        _check_patch(x_pos, "SpatialMambaBlock")
        P = x_pos.shape[1]
        t = self.expand(self.norm_in(x_pos))
        y = self.ssm(spatial_scan(t))
        y = spatial_unflatten(y, P)
        y = self.project(self.norm_out(y))
        out = ops.add(x_pos, y)
        assert out.shape == x_pos.shape
        return out


class SpectralMambaBlock(nn.Module):
    """Band-sequence scan over the center pixel's spectrum.

    The D-length center feature becomes D tokens of width ssm_ratio; the
    bidirectional strategy runs separately-parameterized scans over the
    forward and flipped sequences and merges them as y0 + flip(y1).
    """

    def __init__(self, dim, n_state, ssm_ratio, rng, bidirectional=True,
                 dt_rank="auto", euler=False, feedthrough=False, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.bidirectional = bidirectional
        self.norm_in = nn.LayerNorm(dim, dtype=dtype)
        self.expand = nn.Linear(1, ssm_ratio, rng, dtype=dtype)
        self.ssm_fwd = SelectiveSSM(ssm_ratio, n_state, rng, dt_rank=dt_rank, euler=euler,
                                    feedthrough=feedthrough, dtype=dtype)
        if bidirectional:
            self.ssm_rev = SelectiveSSM(ssm_ratio, n_state, rng, dt_rank=dt_rank, euler=euler,
                                        feedthrough=feedthrough, dtype=dtype)
        self.norm_out = nn.LayerNorm(ssm_ratio, dtype=dtype)
        self.project = nn.Linear(ssm_ratio, 1, rng, dtype=dtype)

    def forward(self, x_pos):
        _check_patch(x_pos, "SpectralMambaBlock")
        if x_pos.shape[1] % 2 == 0:
            raise ShapeError(f"SpectralMambaBlock: even patch size {x_pos.shape[1]} has no center pixel")
        B = x_pos.shape[0]
        center = ops.take_center(x_pos)  # (B, D)
        t = self.norm_in(center)
        t = ops.reshape(t, (B, self.dim, 1))
        t = self.expand(t)  # (B, D, ssm_ratio)
        y = self.ssm_fwd(ScanSequence(t, ORDER_SPECTRAL_FORWARD))
        if self.bidirectional:
            rev = ops.flip(t, axis=1)
            y_rev = self.ssm_rev(ScanSequence(rev, ORDER_SPECTRAL_REVERSED))
            y = ops.add(y, ops.flip(y_rev, axis=1))
        y = self.project(self.norm_out(y))  # (B, D, 1)
        y = ops.reshape(y, (B, self.dim))
        out = ops.reshape(ops.add(center, y), (B, 1, 1, self.dim))
        assert out.shape == (B, 1, 1, self.dim)
        return out


class CrossAttentionFusion(nn.Module):
    """Channel-attention exchange between the spectral and spatial features.

    Softmax weights computed from each stream modulate the other; parameter
    free unless norm affine is enabled. norm_mode "none" exists for tests
    and ablations.
    """

    def __init__(self, dim, norm_affine=False, norm_mode="layernorm", dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.norm_mode = norm_mode
        if norm_mode == "layernorm":
            self.norm_spe = nn.LayerNorm(dim, affine=norm_affine, dtype=dtype)
            self.norm_spa = nn.LayerNorm(dim, affine=norm_affine, dtype=dtype)
        elif norm_mode != "none":
            raise ValueError(f"unknown norm_mode {norm_mode!r}")

    def forward(self, g_spe, g_spa, x_pos):
        _check_patch(g_spa, "CrossAttentionFusion")
        if g_spe.shape != (g_spa.shape[0], 1, 1, self.dim):
            raise ShapeError(f"CrossAttentionFusion: spectral feature shape {g_spe.shape}")
        n_spe = self.norm_spe(g_spe) if self.norm_mode == "layernorm" else g_spe
        n_spa = self.norm_spa(g_spa) if self.norm_mode == "layernorm" else g_spa
        attn_spe = ops.softmax(n_spe, axis=-1)  # (B,1,1,D)
        attn_spa = ops.softmax(ops.avg_pool_spatial(n_spa, keepdims=True), axis=-1)
        fused = ops.add(
            ops.add(ops.mul(attn_spe, g_spa), ops.mul(attn_spa, g_spe)),
            x_pos,
        )
        assert fused.shape == x_pos.shape
        return fused


class GlobalMambaStream(nn.Module):
    """Positional conv + spatial scan + spectral scan + cross-attention."""

    def __init__(self, dim, n_state, ssm_ratio, rng, spectral_scan="bidirectional",
                 dt_rank="auto", euler=False, norm_affine=False, feedthrough=False,
                 dtype=np.float32):
        super().__init__()
        if spectral_scan not in ("unidirectional", "bidirectional"):
            raise ValueError(f"unknown spectral scan strategy {spectral_scan!r}")
        self.dpe = PositionalConv(dim, rng, dtype=dtype)
        self.spatial = SpatialMambaBlock(dim, n_state, ssm_ratio, rng,
                                         dt_rank=dt_rank, euler=euler,
                                         feedthrough=feedthrough, dtype=dtype)
        self.spectral = SpectralMambaBlock(dim, n_state, ssm_ratio, rng,
                                           bidirectional=spectral_scan == "bidirectional",
                                           dt_rank=dt_rank, euler=euler,
                                           feedthrough=feedthrough, dtype=dtype)
        self.fusion = CrossAttentionFusion(dim, norm_affine=norm_affine, dtype=dtype)

    def forward(self, x):
        x_pos = ops.add(x, self.dpe(x))
        g_spa = self.spatial(x_pos)
        g_spe = self.spectral(x_pos)
        return self.fusion(g_spe, g_spa, x_pos)
