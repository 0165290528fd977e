"""Pure-numpy selective-scan recurrence (fallback for the compiled kernel).

Shapes: abar, bbar (B, L, D, N); c (B, L, N); x (B, L, D).
The recurrence is sequential over L; each step vectorizes over (B, D, N).
"""

import numpy as np


def scan_forward(abar, bbar, c, x):
    """Returns (y (B,L,D), h (B,L,D,N)); h is kept for the backward pass."""
    B, L, D, N = abar.shape
    h = np.empty((B, L, D, N), dtype=abar.dtype)
    y = np.empty((B, L, D), dtype=abar.dtype)
    state = np.zeros((B, D, N), dtype=abar.dtype)
    for t in range(L):
        state = abar[:, t] * state + bbar[:, t] * x[:, t, :, None]
        h[:, t] = state
        y[:, t] = np.einsum("bdn,bn->bd", state, c[:, t], optimize=True)
    return y, h


def scan_backward(abar, bbar, c, x, h, gy):
    """Adjoint of scan_forward. Returns (gabar, gbbar, gc, gx)."""
    B, L, D, N = abar.shape
    gabar = np.empty_like(abar)
    gbbar = np.empty_like(bbar)
    gc = np.empty_like(c)
    gx = np.empty_like(x)
    gstate = np.zeros((B, D, N), dtype=abar.dtype)
    for t in range(L - 1, -1, -1):
        gstate = gstate + gy[:, t, :, None] * c[:, t, None, :]
        gc[:, t] = np.einsum("bd,bdn->bn", gy[:, t], h[:, t], optimize=True)
        hprev = h[:, t - 1] if t > 0 else 0.0
        gabar[:, t] = gstate * hprev
        gbbar[:, t] = gstate * x[:, t, :, None]
        gx[:, t] = (gstate * bbar[:, t]).sum(axis=-1)
        gstate = gstate * abar[:, t]
    return gabar, gbbar, gc, gx
