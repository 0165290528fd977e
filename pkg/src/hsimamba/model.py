"""Full network assembly: pixel embedding, dual-stream blocks, fusion, head."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np

from . import nn
from .blocks import GlobalMambaStream
from .convblock import LocalConvBlock
from .fusion import STRATEGIES, Classifier, GlobalLocalFusion
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    """Model configuration violates a structural invariant."""


@dataclass
class ModelConfig:
    bands: int
    num_classes: int
    embed_dim: int = 64          # D
    state_dim: int = 16          # N
    ssm_ratio: int = 2
    patch: int = 7
    num_blocks: int = 1
    embed_groups: int = 4
    spectral_scan: str = "bidirectional"   # or "unidirectional"
    fusion: str = "adaptive"               # sum | concat_linear | learnable | adaptive
    dt_rank: str = "auto"                  # "auto" | "full" | integer as string
    euler_discretization: bool = False
    attn_norm_affine: bool = False
    readout: str = "gap"                   # or "center"
    feedthrough: bool = False

    def validate(self):
        bad = []
        if self.bands < 1:
            bad.append(f"bands must be >= 1 (got {self.bands})")
        if self.num_classes < 2:
            bad.append(f"num_classes must be >= 2 (got {self.num_classes})")
        if self.embed_dim % self.embed_groups:
            bad.append(f"embed_dim {self.embed_dim} not divisible by embed_groups {self.embed_groups}")
        if self.bands % self.embed_groups:
            bad.append(f"bands {self.bands} not divisible by embed_groups {self.embed_groups}")
        if self.embed_dim % 2:
            bad.append(f"embed_dim {self.embed_dim} must be even for the fusion MLP")
        if self.patch % 2 == 0 or self.patch < 1:
            bad.append(f"patch {self.patch} must be odd and positive")
        if self.num_blocks < 1:
            bad.append(f"num_blocks must be >= 1 (got {self.num_blocks})")
        if self.state_dim < 1:
            bad.append(f"state_dim must be >= 1 (got {self.state_dim})")
        if self.ssm_ratio < 1:
            bad.append(f"ssm_ratio must be >= 1 (got {self.ssm_ratio})")
        if self.spectral_scan not in ("unidirectional", "bidirectional"):
            bad.append(f"spectral_scan {self.spectral_scan!r} unknown")
        if self.fusion not in STRATEGIES:
            bad.append(f"fusion {self.fusion!r} not in {STRATEGIES}")
        if self.readout not in ("gap", "center"):
            bad.append(f"readout {self.readout!r} unknown")
        if self.dt_rank not in ("auto", "full") and not str(self.dt_rank).isdigit():
            bad.append(f"dt_rank {self.dt_rank!r} must be 'auto', 'full' or an integer")
        if bad:
            raise ConfigError("invalid model config: " + "; ".join(bad))
        return self

    def resolved_dt_rank(self):
        return self.dt_rank if self.dt_rank in ("auto", "full") else int(self.dt_rank)

    def arch_hash(self):
        """Stable digest of everything that shapes the parameter set."""
        items = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        return hashlib.sha256(";".join(items).encode()).hexdigest()[:16]


class DualStreamBlock(nn.Module):
    """Parallel global (scan) and local (conv) streams over one input."""

    def __init__(self, cfg, rng, dtype=np.float32):
        super().__init__()
        self.global_stream = GlobalMambaStream(
            cfg.embed_dim, cfg.state_dim, cfg.ssm_ratio, rng,
            spectral_scan=cfg.spectral_scan, dt_rank=cfg.resolved_dt_rank(),
            euler=cfg.euler_discretization, norm_affine=cfg.attn_norm_affine,
            feedthrough=cfg.feedthrough, dtype=dtype,
        )
        self.local_stream = LocalConvBlock(cfg.embed_dim, rng, dtype=dtype)
        self.fuse = GlobalLocalFusion(cfg.embed_dim, cfg.fusion, rng, dtype=dtype)

    def forward(self, x):
        g = self.global_stream(x)
        l = self.local_stream(x)
        return self.fuse(g, l)


class MambaConvNet(nn.Module):
    """Grouped-conv pixel embedding -> dual-stream block(s) -> classifier."""

    def __init__(self, config, seed=0, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6F64]))
        self.embedding = nn.GroupedConv2d(
            config.bands, config.embed_dim, 3, config.embed_groups, rng, dtype=dtype
        )
        self.blocks = nn.ModuleList(
            DualStreamBlock(config, rng, dtype=dtype) for _ in range(config.num_blocks)
        )
        self.classifier = Classifier(
            config.embed_dim, config.num_classes, rng, readout=config.readout, dtype=dtype
        )

    def forward(self, x):
        from . import ops

        if not isinstance(x, Tensor):
            x = Tensor(x)
        unbatched = x.ndim == 3
        if unbatched:
            x = ops.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1] != self.config.patch or x.shape[2] != self.config.patch:
            raise ShapeError(
                f"model input must be (B,{self.config.patch},{self.config.patch},{self.config.bands}), got {x.shape}"
            )
        if x.shape[3] != self.config.bands:
            raise ShapeError(f"model expects {self.config.bands} bands, got {x.shape[3]}")
        feat = self.embedding(x)
        for block in self.blocks:
            feat = block(feat)
        logits = self.classifier(feat)
        return ops.reshape(logits, logits.shape[1:]) if unbatched else logits

    def profile_sections(self):
        """Disjoint (name, module) sections covering every parameter once."""
        sections = [("embedding", self.embedding)]
        for i, block in enumerate(self.blocks):
            prefix = f"block{i + 1}"
            gs = block.global_stream
            sections.extend(
                [
                    (f"{prefix}.dpe", gs.dpe),
                    (f"{prefix}.spatial_mamba", gs.spatial),
                    (f"{prefix}.spectral_mamba", gs.spectral),
                    (f"{prefix}.cross_attention", gs.fusion),
                    (f"{prefix}.local_conv.spectral", block.local_stream.spectral),
                    (f"{prefix}.local_conv.spatial", block.local_stream.spatial),
                    (f"{prefix}.local_conv.fuse", block.local_stream.fuse),
                    (f"{prefix}.global_local_fusion", block.fuse),
                ]
            )
        sections.append(("classifier", self.classifier))
        return sections


def build_model(config, seed=0, dtype=np.float32):
    return MambaConvNet(config, seed=seed, dtype=dtype)
