"""Fast built-in verification: oracle agreement, gradients, metrics, kernels."""

from __future__ import annotations

import numpy as np

from . import kernels, ops, ssm
from .data import metrics
from .gradcheck import gradcheck
from .tensor import Tensor


def _check(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return ok


def _static_instance(rng, length, d_inner, n_state):
    abar = rng.uniform(0.05, 0.95, (d_inner, n_state))
    bbar = rng.normal(size=(d_inner, n_state))
    c = rng.normal(size=n_state)
    x = rng.normal(size=(length, d_inner))
    return abar, bbar, c, x


def _scan_static(abar, bbar, c, x):
    length = x.shape[0]
    ab = np.broadcast_to(abar, (1, length) + abar.shape).copy()
    bb = np.broadcast_to(bbar, (1, length) + bbar.shape).copy()
    cc = np.broadcast_to(c, (1, length, c.shape[0])).copy()
    return ssm.scan_recurrence(ab, bb, cc, x[None].copy()).data[0]


def run():
    rng = np.random.default_rng(1234)
    ok = True

    worst = 0.0
    for _ in range(5):
        inst = _static_instance(rng, int(rng.integers(4, 33)), int(rng.integers(1, 5)),
                                int(rng.integers(1, 9)))
        y = _scan_static(*inst)
        ref = ssm.ssm_conv_oracle(*inst)
        worst = max(worst, float(np.max(np.abs(y - ref) / np.maximum(np.abs(ref), 1e-8))))
    ok &= _check("scan matches convolution oracle", worst < 1e-5, f"max rel {worst:.2e}")

    x64 = Tensor(rng.normal(size=(3, 5)))
    err = gradcheck(lambda t: ops.sum_all(ops.silu(t)), x64)
    ok &= _check("silu gradient", err < 1e-6, f"{err:.2e}")

    s6 = ssm.SelectiveSSM(3, 4, rng, dtype=np.float64)
    seq = Tensor(rng.normal(size=(6, 3)))
    err = gradcheck(lambda t: ops.sum_all(s6(ssm.ScanSequence(t, ssm.ORDER_SPECTRAL_FORWARD))), seq)
    ok &= _check("selective scan gradient", err < 1e-4, f"{err:.2e}")

    oa, aa, kappa, _ = metrics(np.array([[45, 5], [15, 35]]))
    ok &= _check("metrics oracle", (oa, aa, kappa) == (0.80, 0.80, 0.60),
                 f"OA={oa} AA={aa} kappa={kappa}")

    if len(kernels.available_backends()) > 1:
        inst = _static_instance(rng, 16, 4, 6)
        prev = kernels.use_backend("numpy")
        y_np = _scan_static(*inst)
        kernels.use_backend("cython")
        y_cy = _scan_static(*inst)
        kernels.use_backend(prev)
        agree = bool(np.allclose(y_np, y_cy, rtol=1e-6, atol=1e-9))
        ok &= _check("kernel backends agree", agree)
    else:
        print(f"SKIP  kernel backends agree (only {kernels.available_backends()} built)")

    zoh_a, zoh_b = ssm.zoh_discretize(
        Tensor(np.array([[-1.0]])), Tensor(np.array([[1.0]])), Tensor(np.array([[1.0]]))
    )
    ok &= _check(
        "zoh unit case",
        abs(zoh_a.data[0, 0, 0] - np.exp(-1)) < 1e-12
        and abs(zoh_b.data[0, 0, 0] - (1 - np.exp(-1))) < 1e-12,
    )

    print("selftest:", "all checks passed" if ok else "FAILURES above")
    return 0 if ok else 1
