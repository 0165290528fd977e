"""Differentiable primitives over Tensor.

Each op runs its forward in numpy, then registers one tape node whose
backward closure maps output grads to input grads. Convolutions are fused
ops (padding and shifts never appear on the tape). Layout is channel-last:
images are (B, H, W, C), token sequences are (B, L, C).
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, record_op


def _t(x):
    if not isinstance(x, Tensor):
        raise TypeError(f"expected Tensor, got {type(x).__name__}")
    return x


def _same_dtype(name, *ts):
    d = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != d:
            raise ShapeError(f"{name}: mixed dtypes {d} vs {t.dtype}")
    return d


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _t(a), _t(b)
    _same_dtype("add", a, b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError as e:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from e

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    record_op("add", (a, b), (out,), bwd)
    return out


def sub(a, b):
    a, b = _t(a), _t(b)
    _same_dtype("sub", a, b)
    try:
        out = Tensor(a.data - b.data)
    except ValueError as e:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from e

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    record_op("sub", (a, b), (out,), bwd)
    return out


def mul(a, b):
    a, b = _t(a), _t(b)
    _same_dtype("mul", a, b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError as e:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from e

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    record_op("mul", (a, b), (out,), bwd)
    return out


def neg(x):
    x = _t(x)
    out = Tensor(-x.data)
    record_op("neg", (x,), (out,), lambda g: -g)
    return out


def exp(x):
    x = _t(x)
    out = Tensor(np.exp(x.data))
    record_op("exp", (x,), (out,), lambda g: g * out.data)
    return out


def scale(x, s):
    """Multiply by a python scalar (not a tape input)."""
    x = _t(x)
    s = x.dtype.type(s)
    out = Tensor(x.data * s)
    record_op("scale", (x,), (out,), lambda g: g * s)
    return out


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(x):
    x = _t(x)
    s = _sigmoid(x.data)
    out = Tensor(s)
    record_op("sigmoid", (x,), (out,), lambda g: g * s * (1.0 - s))
    return out


def relu(x):
    x = _t(x)
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0
    record_op("relu", (x,), (out,), lambda g: g * mask)
    return out


def silu(x):
    x = _t(x)
    s = _sigmoid(x.data)
    out = Tensor(x.data * s)

    def bwd(g):
        return g * s * (1.0 + x.data * (1.0 - s))

    record_op("silu", (x,), (out,), bwd)
    return out


def softplus(x):
    x = _t(x)
    out = Tensor(np.logaddexp(x.dtype.type(0), x.data))
    s = _sigmoid(x.data)
    record_op("softplus", (x,), (out,), lambda g: g * s)
    return out


def softmax(x, axis=-1):
    x = _t(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return y * (g - dot)

    record_op("softmax", (x,), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = _t(a), _t(b)
    _same_dtype("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    record_op("matmul", (a, b), (out,), bwd)
    return out


def linear(x, w, b=None):
    """x (..., in) @ w (in, out) + b (out,)."""
    x, w = _t(x), _t(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    y2 = x2 @ w.data
    if b is not None:
        b = _t(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
        y2 = y2 + b.data
    out = Tensor(y2.reshape(x.shape[:-1] + (w.shape[1],)))

    def bwd(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    record_op("linear", (x, w) if b is None else (x, w, b), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# convolutions (stride 1, zero same-padding)
# ---------------------------------------------------------------------------

def conv2d_grouped(x, w, b=None, groups=1):
    """Grouped 2-D conv. x (B,H,W,Cin), w (Cout,kh,kw,Cin/groups), b (Cout,)."""
    x, w = _t(x), _t(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d_grouped: need 4-D x and w, got {x.shape}, {w.shape}")
    B, H, W, cin = x.shape
    cout, kh, kw, cpg = w.shape
    if cin % groups or cout % groups:
        raise ShapeError(f"conv2d_grouped: channels ({cin}->{cout}) not divisible by groups={groups}")
    if cpg != cin // groups:
        raise ShapeError(f"conv2d_grouped: weight expects {cpg} channels/group, input has {cin // groups}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d_grouped: even kernel {kh}x{kw} breaks same-padding")
    ph, pw = kh // 2, kw // 2
    opg = cout // groups
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((B, H, W, cout), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i:i + H, j:j + W, :]
            for gidx in range(groups):
                xg = xs[..., gidx * cpg:(gidx + 1) * cpg].reshape(-1, cpg)
                wg = w.data[gidx * opg:(gidx + 1) * opg, i, j, :]
                out[..., gidx * opg:(gidx + 1) * opg] += (xg @ wg.T).reshape(B, H, W, opg)
    if b is not None:
        b = _t(b)
        if b.shape != (cout,):
            raise ShapeError(f"conv2d_grouped: bias shape {b.shape} != ({cout},)")
        out += b.data
    outt = Tensor(out)

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, i:i + H, j:j + W, :]
                for gidx in range(groups):
                    sl_in = slice(gidx * cpg, (gidx + 1) * cpg)
                    sl_out = slice(gidx * opg, (gidx + 1) * opg)
                    g2 = g[..., sl_out].reshape(-1, opg)
                    xg = xs[..., sl_in].reshape(-1, cpg)
                    gw[sl_out, i, j, :] += g2.T @ xg
                    gxp[:, i:i + H, j:j + W, sl_in] += (g2 @ w.data[sl_out, i, j, :]).reshape(B, H, W, cpg)
        gx = gxp[:, ph:ph + H, pw:pw + W, :]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    record_op("conv2d_grouped", (x, w) if b is None else (x, w, b), (outt,), bwd)
    return outt


def depthwise_conv2d(x, w, b=None):
    """Per-channel 2-D conv (no channel mixing). x (B,H,W,C), w (kh,kw,C)."""
    x, w = _t(x), _t(w)
    if x.ndim != 4 or w.ndim != 3:
        raise ShapeError(f"depthwise_conv2d: need x 4-D, w 3-D, got {x.shape}, {w.shape}")
    B, H, W, C = x.shape
    kh, kw, wc = w.shape
    if wc != C:
        raise ShapeError(f"depthwise_conv2d: weight channels {wc} != input channels {C}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"depthwise_conv2d: even kernel {kh}x{kw} breaks same-padding")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((B, H, W, C), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + H, j:j + W, :] * w.data[i, j, :]
    if b is not None:
        b = _t(b)
        if b.shape != (C,):
            raise ShapeError(f"depthwise_conv2d: bias shape {b.shape} != ({C},)")
        out += b.data
    outt = Tensor(out)

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, i:i + H, j:j + W, :]
                gw[i, j, :] += (g * xs).sum(axis=(0, 1, 2))
                gxp[:, i:i + H, j:j + W, :] += g * w.data[i, j, :]
        gx = gxp[:, ph:ph + H, pw:pw + W, :]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    record_op("depthwise_conv2d", (x, w) if b is None else (x, w, b), (outt,), bwd)
    return outt


def channel_conv3(x, w):
    """Three-tap conv along the channel axis (the 1x1x3 3-D conv), zero-padded.

    x (..., C), w (3,). Output channel c is w0*x[c-1] + w1*x[c] + w2*x[c+1].
    """
    x, w = _t(x), _t(w)
    if w.shape != (3,):
        raise ShapeError(f"channel_conv3: weight shape {w.shape} != (3,)")
    C = x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 1) + [(1, 1)]
    xp = np.pad(x.data, pad)
    out = (
        w.data[0] * xp[..., 0:C]
        + w.data[1] * xp[..., 1:C + 1]
        + w.data[2] * xp[..., 2:C + 2]
    )
    outt = Tensor(out)

    def bwd(g):
        gw = np.array(
            [
                (g * xp[..., 0:C]).sum(),
                (g * xp[..., 1:C + 1]).sum(),
                (g * xp[..., 2:C + 2]).sum(),
            ],
            dtype=w.data.dtype,
        )
        gxp = np.zeros_like(xp)
        gxp[..., 0:C] += w.data[0] * g
        gxp[..., 1:C + 1] += w.data[1] * g
        gxp[..., 2:C + 2] += w.data[2] * g
        return gxp[..., 1:C + 1], gw

    record_op("channel_conv3", (x, w), (outt,), bwd)
    return outt


def pointwise_conv(x, w, b=None):
    """1x1 conv across channels: just a linear map over the last axis."""
    return linear(x, w, b)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalize over the last axis; optional learned affine."""
    x = _t(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat
    if gamma is not None:
        gamma = _t(gamma)
        if gamma.shape != (x.shape[-1],):
            raise ShapeError(f"layer_norm: gamma shape {gamma.shape} != ({x.shape[-1]},)")
        y = y * gamma.data
    if beta is not None:
        beta = _t(beta)
        y = y + beta.data
    out = Tensor(y)
    n = x.shape[-1]

    def bwd(g):
        gxhat = g * gamma.data if gamma is not None else g
        # d/dx of (x - mu) * inv with mu, var functions of x
        gi = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [gi]
        if gamma is not None:
            grads.append((g * xhat).reshape(-1, n).sum(axis=0))
        if beta is not None:
            grads.append(g.reshape(-1, n).sum(axis=0))
        return tuple(grads)

    inputs = [x] + [t for t in (gamma, beta) if t is not None]
    record_op("layer_norm", tuple(inputs), (out,), bwd)
    return out


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch norm over all axes but the last (channel-last layout).

    running_mean/var are plain numpy buffers mutated in training mode;
    they never join the tape. Eval mode is a frozen affine map.
    """
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} != ({C},)")
    axes = tuple(range(x.ndim - 1))
    if training:
        m = int(np.prod([x.shape[a] for a in axes])) if axes else 1
        if m < 1:
            raise ShapeError("batch_norm: empty reduction")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    if training:
        m = int(np.prod([x.shape[a] for a in axes])) if axes else 1

        def bwd(g):
            gxhat = g * gamma.data
            gvar_term = (gxhat * xhat).sum(axis=axes) / m
            gmu_term = gxhat.sum(axis=axes) / m
            gx = inv * (gxhat - gmu_term - xhat * gvar_term)
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:

        def bwd(g):
            return g * gamma.data * inv, (g * xhat).sum(axes), g.sum(axes)

    record_op("batch_norm", (x, gamma, beta), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# shape / structure
# ---------------------------------------------------------------------------

def reshape(x, shape):
    x = _t(x)
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from e
    record_op("reshape", (x,), (out,), lambda g: g.reshape(x.shape))
    return out


def flip(x, axis):
    x = _t(x)
    out = Tensor(np.flip(x.data, axis=axis).copy())
    record_op("flip", (x,), (out,), lambda g: np.flip(g, axis=axis))
    return out


def concat(tensors, axis):
    tensors = [_t(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    _same_dtype("concat", *tensors)
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError as e:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}") from e
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    record_op("concat", tuple(tensors), (out,), bwd)
    return out


def take_center(x):
    """Center pixel of a (B, P, P, C) patch -> (B, C). P must be odd."""
    x = _t(x)
    if x.ndim != 4 or x.shape[1] != x.shape[2]:
        raise ShapeError(f"take_center: need (B,P,P,C), got {x.shape}")
    P = x.shape[1]
    if P % 2 == 0:
        raise ShapeError(f"take_center: even patch size {P} has no center pixel")
    c = P // 2
    out = Tensor(x.data[:, c, c, :].copy())

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, c, c, :] = g
        return gx

    record_op("take_center", (x,), (out,), bwd)
    return out


def avg_pool_spatial(x, keepdims=False):
    """Global average over the two spatial axes of (B, H, W, C)."""
    x = _t(x)
    if x.ndim != 4:
        raise ShapeError(f"avg_pool_spatial: need (B,H,W,C), got {x.shape}")
    B, H, W, C = x.shape
    y = x.data.mean(axis=(1, 2), keepdims=keepdims)
    out = Tensor(y)
    inv = 1.0 / (H * W)

    def bwd(g):
        gg = g if keepdims else g.reshape(B, 1, 1, C)
        return np.broadcast_to(gg * inv, x.shape).astype(x.data.dtype)

    record_op("avg_pool_spatial", (x,), (out,), bwd)
    return out


def sum_all(x):
    x = _t(x)
    out = Tensor(np.array(x.data.sum(), dtype=x.data.dtype))
    record_op("sum_all", (x,), (out,), lambda g: np.broadcast_to(g, x.shape).astype(x.data.dtype))
    return out


def mean_all(x):
    x = _t(x)
    out = Tensor(np.array(x.data.mean(), dtype=x.data.dtype))
    inv = 1.0 / x.size

    def bwd(g):
        return np.broadcast_to(g * inv, x.shape).astype(x.data.dtype)

    record_op("mean_all", (x,), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cross_entropy(logits, labels):
    """Mean negative log-likelihood from raw logits via fused log-softmax.

    logits (B, K); labels int array (B,) of class indices (not a tape input).
    """
    logits = _t(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be (B,K), got {logits.shape}")
    B, K = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} != ({B},)")
    if labels.min() < 0 or labels.max() >= K:
        raise ShapeError(f"cross_entropy: label outside [0,{K})")
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True)) + m
    ll = logits.data[np.arange(B), labels] - lse[:, 0]
    out = Tensor(np.array(-ll.mean(), dtype=logits.data.dtype))
    probs = np.exp(logits.data - lse)

    def bwd(g):
        gx = probs.copy()
        gx[np.arange(B), labels] -= 1.0
        return gx * (g / B)

    record_op("cross_entropy", (logits,), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# dispatch surface
# ---------------------------------------------------------------------------

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "exp": exp,
    "sigmoid": sigmoid,
    "relu": relu,
    "silu": silu,
    "softplus": softplus,
    "softmax": softmax,
    "matmul": matmul,
    "linear": linear,
    "conv2d_grouped": conv2d_grouped,
    "depthwise_conv2d": depthwise_conv2d,
    "channel_conv3": channel_conv3,
    "pointwise_conv": pointwise_conv,
    "layer_norm": layer_norm,
    "batch_norm": batch_norm,
    "reshape": reshape,
    "flip": flip,
    "concat": concat,
    "take_center": take_center,
    "avg_pool_spatial": avg_pool_spatial,
    "sum": sum_all,
    "mean": mean_all,
    "cross_entropy": cross_entropy,
}


def apply_primitive(op_kind, *inputs, **kwargs):
    """Name-based dispatch into the primitive table."""
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise KeyError(f"unknown primitive '{op_kind}'") from None
    return fn(*inputs, **kwargs)
