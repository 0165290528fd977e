"""Finite-difference verification harness for tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import NumericError, Tensor, no_grad


def gradcheck(fn, point, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    fn maps one Tensor (or a list of Tensors) to a scalar Tensor. Relative
    error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|,
    1e-8); the max over all coordinates of all inputs is returned. Use f64
    points to keep the finite-difference noise below the tolerances.
    """
    points = point if isinstance(point, (list, tuple)) else [point]
    points = [p if isinstance(p, Tensor) else Tensor(p) for p in points]
    for p in points:
        p.requires_grad = True
        p.zero_grad()
        if not np.all(np.isfinite(p.data)):
            raise NumericError("gradcheck: non-finite point")

    loss = fn(*points)
    if loss.size != 1:
        raise ValueError(f"gradcheck: fn must return a scalar, got shape {loss.shape}")
    loss.backward()
    analytic = []
    for p in points:
        if p.grad is None:
            analytic.append(np.zeros_like(p.data))
        else:
            analytic.append(p.grad.copy())
        p.zero_grad()

    worst = 0.0
    for p, an in zip(points, analytic):
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                up = fn(*points).item()
            flat[i] = orig - eps
            with no_grad():
                dn = fn(*points).item()
            flat[i] = orig
            num[i] = (up - dn) / (2.0 * eps)
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(an))):
            raise NumericError("gradcheck: non-finite gradient")
        a = an.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - num) / denom)))
    return worst
