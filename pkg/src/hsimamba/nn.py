"""Parameter-owning layers over the ops primitives.

Module tracks parameters, buffers and children in registration order so
checkpoint entries and profiler lines get stable hierarchical names.
Construction is explicit about randomness: every layer takes the Generator
it should draw its weights from.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) redrawn until inside [-2*std, 2*std]."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return Tensor(out.astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype=np.float32):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, arr):
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def named_children(self):
        return self._children.items()

    def train(self, mode=True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def param_count(self):
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._list = []
        for m in mods:
            self.append(m)

    def append(self, m):
        self._children[str(len(self._list))] = m
        self._list.append(m)

    def __iter__(self):
        return iter(self._list)

    def __getitem__(self, idx):
        return self._list[idx]

    def __len__(self):
        return len(self._list)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = trunc_normal(rng, (in_dim, out_dim), dtype=dtype)
        self.bias = zeros_param((out_dim,), dtype=dtype) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, affine=True, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.gamma = ones_param((dim,), dtype=dtype) if affine else None
        self.beta = zeros_param((dim,), dtype=dtype) if affine else None

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class BatchNorm(Module):
    """Channel-last batch norm; running stats update only in training mode."""

    def __init__(self, dim, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = ones_param((dim,), dtype=dtype)
        self.beta = zeros_param((dim,), dtype=dtype)
        self.register_buffer("running_mean", np.zeros(dim, dtype=np.float64))
        self.register_buffer("running_var", np.ones(dim, dtype=np.float64))

    def forward(self, x):
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class GroupedConv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, groups, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.groups = groups
        self.weight = trunc_normal(rng, (out_ch, kernel, kernel, in_ch // groups), dtype=dtype)
        self.bias = zeros_param((out_ch,), dtype=dtype) if bias else None

    def forward(self, x):
        return ops.conv2d_grouped(x, self.weight, self.bias, groups=self.groups)


class DepthwiseConv2d(Module):
    def __init__(self, channels, kernel, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.weight = trunc_normal(rng, (kernel, kernel, channels), dtype=dtype)
        self.bias = zeros_param((channels,), dtype=dtype) if bias else None

    def forward(self, x):
        return ops.depthwise_conv2d(x, self.weight, self.bias)


class PointwiseConv(Module):
    """1x1 conv over the channel axis."""

    def __init__(self, in_ch, out_ch, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.weight = trunc_normal(rng, (in_ch, out_ch), dtype=dtype)
        self.bias = zeros_param((out_ch,), dtype=dtype) if bias else None

    def forward(self, x):
        return ops.pointwise_conv(x, self.weight, self.bias)


class ChannelConv3(Module):
    """Single 3-tap kernel sliding along the channel axis (3 weights total)."""

    def __init__(self, rng, dtype=np.float32):
        super().__init__()
        self.weight = trunc_normal(rng, (3,), dtype=dtype)

    def forward(self, x):
        return ops.channel_conv3(x, self.weight)
