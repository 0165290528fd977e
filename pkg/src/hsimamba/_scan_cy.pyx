# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled selective-scan recurrence (hot kernel).

Same contract as _scan_np: abar/bbar (B,L,D,N), c (B,L,N), x (B,L,D).
The time loop is inherently sequential; channels and batch entries are
independent and iterate in a fixed order for bit-reproducibility.
"""

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused real:
    float
    double


def scan_forward(real[:, :, :, ::1] abar, real[:, :, :, ::1] bbar,
                 real[:, :, ::1] c, real[:, :, ::1] x):
    cdef Py_ssize_t B = abar.shape[0], L = abar.shape[1]
    cdef Py_ssize_t D = abar.shape[2], N = abar.shape[3]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    h_arr = np.empty((B, L, D, N), dtype=dtype)
    y_arr = np.empty((B, L, D), dtype=dtype)
    cdef real[:, :, :, ::1] h = h_arr
    cdef real[:, :, ::1] y = y_arr
    cdef Py_ssize_t b, t, d, n
    cdef real state, acc, xv
    with nogil:
        for b in range(B):
            for d in range(D):
                for n in range(N):
                    h[b, 0, d, n] = bbar[b, 0, d, n] * x[b, 0, d]
            for t in range(1, L):
                for d in range(D):
                    xv = x[b, t, d]
                    for n in range(N):
                        h[b, t, d, n] = abar[b, t, d, n] * h[b, t - 1, d, n] + bbar[b, t, d, n] * xv
            for t in range(L):
                for d in range(D):
                    acc = 0
                    for n in range(N):
                        acc += h[b, t, d, n] * c[b, t, n]
                    y[b, t, d] = acc
    return y_arr, h_arr


def scan_backward(real[:, :, :, ::1] abar, real[:, :, :, ::1] bbar,
                  real[:, :, ::1] c, real[:, :, ::1] x,
                  real[:, :, :, ::1] h, real[:, :, ::1] gy):
    cdef Py_ssize_t B = abar.shape[0], L = abar.shape[1]
    cdef Py_ssize_t D = abar.shape[2], N = abar.shape[3]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gabar_arr = np.empty((B, L, D, N), dtype=dtype)
    gbbar_arr = np.empty((B, L, D, N), dtype=dtype)
    gc_arr = np.zeros((B, L, N), dtype=dtype)
    gx_arr = np.empty((B, L, D), dtype=dtype)
    gstate_arr = np.zeros((B, D, N), dtype=dtype)
    cdef real[:, :, :, ::1] gabar = gabar_arr
    cdef real[:, :, :, ::1] gbbar = gbbar_arr
    cdef real[:, :, ::1] gc = gc_arr
    cdef real[:, :, ::1] gx = gx_arr
    cdef real[:, :, ::1] gstate = gstate_arr
    cdef Py_ssize_t b, t, d, n
    cdef real g, gyv, hprev, xv, xacc
    with nogil:
        for b in range(B):
            for t in range(L - 1, -1, -1):
                for d in range(D):
                    gyv = gy[b, t, d]
                    xv = x[b, t, d]
                    xacc = 0
                    for n in range(N):
                        g = gstate[b, d, n] + gyv * c[b, t, n]
                        gc[b, t, n] += gyv * h[b, t, d, n]
                        if t > 0:
                            hprev = h[b, t - 1, d, n]
                        else:
                            hprev = 0
                        gabar[b, t, d, n] = g * hprev
                        gbbar[b, t, d, n] = g * xv
                        xacc += g * bbar[b, t, d, n]
                        gstate[b, d, n] = g * abar[b, t, d, n]
                    gx[b, t, d] = xacc
    return gabar_arr, gbbar_arr, gc_arr, gx_arr
