"""Selective-scan machinery: ZOH discretization, recurrence, conv oracle,
causality/stability properties, gradients."""

import math

import numpy as np
import pytest

from hsimamba import ops, ssm
from hsimamba.gradcheck import gradcheck
from hsimamba.tensor import ShapeError, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(123)


def _static_scan(abar, bbar, c, x):
    """Run the recurrence with time-constant parameters."""
    L = x.shape[0]
    ab = np.broadcast_to(abar, (1, L) + abar.shape).copy()
    bb = np.broadcast_to(bbar, (1, L) + bbar.shape).copy()
    cc = np.broadcast_to(c, (1, L, c.shape[0])).copy()
    return ssm.scan_recurrence(ab, bb, cc, x[None].copy()).data[0]


# ---------------------------------------------------------------------------
# ZOH discretization
# ---------------------------------------------------------------------------

def test_zoh_unit_case():
    abar, bbar = ssm.zoh_discretize(
        Tensor(np.array([[-1.0]])), Tensor(np.array([[1.0]])), Tensor(np.array([[1.0]]))
    )
    assert abs(abar.data[0, 0, 0] - math.exp(-1)) < 1e-15
    assert abs(bbar.data[0, 0, 0] - (1 - math.exp(-1))) < 1e-15


def test_zoh_small_delta_limit():
    delta = 1e-9
    abar, bbar = ssm.zoh_discretize(
        Tensor(np.array([[-1.0]])), Tensor(np.array([[1.0]])), Tensor(np.array([[delta]]))
    )
    assert abs(abar.data[0, 0, 0] - 1.0) < 1e-8
    assert abs(bbar.data[0, 0, 0] - delta) < 1e-8


def test_zoh_small_a_series_fallback():
    # |delta*a| = 5e-10 takes the series branch; (e^u - 1)/u -> 1 so bbar -> delta*b
    abar, bbar = ssm.zoh_discretize(
        Tensor(np.array([[-1e-9]])), Tensor(np.array([[2.0]])), Tensor(np.array([[0.5]]))
    )
    assert abs(bbar.data[0, 0, 0] - 1.0) < 1e-6
    assert abs(abar.data[0, 0, 0] - 1.0) < 1e-9


def test_zoh_rejects_bad_signs():
    a = Tensor(np.array([[-1.0]]))
    b = Tensor(np.array([[1.0]]))
    with pytest.raises(ValueError, match="positive"):
        ssm.zoh_discretize(a, b, Tensor(np.array([[-0.1]])))
    with pytest.raises(ValueError, match="negative"):
        ssm.zoh_discretize(Tensor(np.array([[0.5]])), b, Tensor(np.array([[0.1]])))


def test_zoh_series_matches_exact_at_cutoff(rng):
    # both branches agree to f64 precision around |u| = 1e-4
    a = Tensor(np.full((1, 1), -1.0))
    b = Tensor(np.ones((1, 1)))
    for delta in (0.99e-4, 1.01e-4):
        _, bbar = ssm.zoh_discretize(a, b, Tensor(np.full((1, 1), delta)))
        exact = math.expm1(-delta) / -1.0
        assert abs(bbar.data[0, 0, 0] - exact) < 1e-16


def _zoh_loss(a_, b_, d_):
    ab, bb = ssm.zoh_discretize(a_, b_, d_)
    w1 = Tensor(np.random.default_rng(5).normal(size=ab.shape))
    w2 = Tensor(np.random.default_rng(6).normal(size=bb.shape))
    return ops.sum_all(ops.add(ops.mul(ab, w1), ops.mul(bb, w2)))


def test_zoh_gradcheck_exact_branch(rng):
    a = Tensor(-rng.uniform(0.1, 2.0, (3, 2)))
    b = Tensor(rng.normal(size=(4, 2)))
    delta = Tensor(rng.uniform(0.05, 0.8, (4, 3)))
    assert gradcheck(_zoh_loss, [a, b, delta]) <= 1e-6


def test_zoh_gradcheck_series_branch(rng):
    # |u| stays under the 1e-4 cutoff; magnitudes kept well above the FD eps
    a = Tensor(-rng.uniform(1e-3, 5e-3, (3, 2)))
    b = Tensor(rng.normal(size=(4, 2)))
    delta = Tensor(rng.uniform(1e-3, 9e-3, (4, 3)))
    assert gradcheck(_zoh_loss, [a, b, delta]) <= 1e-5


# ---------------------------------------------------------------------------
# recurrence
# ---------------------------------------------------------------------------

def test_scan_zero_input_zero_output(rng):
    abar = rng.uniform(0.1, 0.9, (2, 5, 3, 4))
    bbar = rng.normal(size=(2, 5, 3, 4))
    c = rng.normal(size=(2, 5, 4))
    x = np.zeros((2, 5, 3))
    y = ssm.scan_recurrence(abar, bbar, c, x).data
    assert np.array_equal(y, np.zeros_like(y))


def test_scan_two_step_hand_recurrence():
    # abar=0.5, bbar=1, c=1, x=[1,1]: h=[1, 1.5], y=[1, 1.5]
    y = _static_scan(
        np.array([[0.5]]), np.array([[1.0]]), np.array([1.0]), np.array([[1.0], [1.0]])
    )
    assert np.allclose(y[:, 0], [1.0, 1.5], atol=1e-12)


def test_scan_rejects_empty_and_mismatched():
    with pytest.raises(ShapeError):
        ssm.scan_recurrence(np.zeros((1, 2, 3, 4)), np.zeros((1, 2, 3, 4)),
                            np.zeros((1, 3, 4)), np.zeros((1, 2, 3)))
    with pytest.raises(ShapeError):
        ssm.scan_recurrence(np.zeros((1, 0, 3, 4)), np.zeros((1, 0, 3, 4)),
                            np.zeros((1, 0, 4)), np.zeros((1, 0, 3)))


def test_scan_causality_exact(rng):
    L, D, N = 10, 3, 4
    abar = rng.uniform(0.1, 0.9, (1, L, D, N))
    bbar = rng.normal(size=(1, L, D, N))
    c = rng.normal(size=(1, L, N))
    x = rng.normal(size=(1, L, D))
    y = ssm.scan_recurrence(abar, bbar, c, x).data
    for t in (3, 7):
        x2 = x.copy()
        x2[:, t + 1:] += rng.normal(size=x2[:, t + 1:].shape)
        y2 = ssm.scan_recurrence(abar, bbar, c, x2).data
        assert np.array_equal(y[:, : t + 1], y2[:, : t + 1])


def test_scan_stability_zero_input_decay(rng):
    # a < 0 means |abar| < 1: the state norm cannot grow once input stops
    L, D, N = 20, 2, 3
    a = -np.abs(rng.normal(size=(D, N))) - 0.05
    delta = rng.uniform(0.1, 1.0, (1, L, D))
    b = rng.normal(size=(1, L, N))
    abar, bbar = ssm.zoh_discretize(Tensor(a), Tensor(b), Tensor(delta))
    x = rng.normal(size=(1, L, D))
    k = 8
    x[:, k:] = 0.0
    from hsimamba import kernels

    c = np.broadcast_to(rng.normal(size=N), (1, L, N)).copy()
    _, h = kernels.scan_forward(abar.data, bbar.data, c, x)
    norms = np.linalg.norm(h[0].reshape(L, -1), axis=1)
    assert np.all(norms[k + 1:] <= norms[k:-1] + 1e-12)


def test_scan_matches_conv_oracle_randomized(rng):
    worst = 0.0
    for _ in range(20):
        L = int(rng.integers(1, 65))
        D = int(rng.integers(1, 9))
        N = int(rng.integers(1, 17))
        abar = rng.uniform(0.05, 0.95, (D, N))
        bbar = rng.normal(size=(D, N))
        c = rng.normal(size=N)
        x = rng.normal(size=(L, D))
        y = _static_scan(abar, bbar, c, x)
        ref = ssm.ssm_conv_oracle(abar, bbar, c, x)
        worst = max(worst, float(np.max(np.abs(y - ref) / np.maximum(np.abs(ref), 1e-8))))
    assert worst <= 1e-5


def test_conv_oracle_length_one_and_memoryless(rng):
    abar = rng.uniform(0.1, 0.9, (2, 3))
    bbar = rng.normal(size=(2, 3))
    c = rng.normal(size=3)
    x1 = rng.normal(size=(1, 2))
    y = ssm.ssm_conv_oracle(abar, bbar, c, x1)
    assert np.allclose(y[0], (bbar * c).sum(axis=1) * x1[0], atol=1e-12)
    # abar = 0: kernel is (c.bbar, 0, ..., 0) -> pure pointwise map
    xL = rng.normal(size=(6, 2))
    y = ssm.ssm_conv_oracle(np.zeros((2, 3)), bbar, c, xL)
    assert np.allclose(y, xL * (bbar * c).sum(axis=1), atol=1e-12)


def test_conv_oracle_rejects_time_varying(rng):
    L, D, N = 4, 2, 3
    abar = rng.uniform(0.1, 0.9, (L, D, N))
    abar[2] *= 0.5
    with pytest.raises(ValueError, match="static"):
        ssm.ssm_conv_oracle(abar, rng.normal(size=(D, N)), rng.normal(size=N),
                            rng.normal(size=(L, D)))


def test_conv_oracle_accepts_constant_stacks(rng):
    L, D, N = 5, 2, 3
    abar = rng.uniform(0.1, 0.9, (D, N))
    bbar = rng.normal(size=(D, N))
    c = rng.normal(size=N)
    x = rng.normal(size=(L, D))
    stacked = ssm.ssm_conv_oracle(
        np.broadcast_to(abar, (L, D, N)).copy(),
        np.broadcast_to(bbar, (L, D, N)).copy(),
        np.broadcast_to(c, (L, N)).copy(),
        x,
    )
    assert np.array_equal(stacked, ssm.ssm_conv_oracle(abar, bbar, c, x))


# ---------------------------------------------------------------------------
# parameter projection and the full S6 module
# ---------------------------------------------------------------------------

def test_project_bcdelta_contracts(rng):
    s6 = ssm.SelectiveSSM(3, 4, rng, dtype=np.float64)
    seq = ssm.ScanSequence(Tensor(rng.normal(size=(6, 3))), ssm.ORDER_SPECTRAL_FORWARD)
    b, c, delta = s6.project_bcdelta(seq)
    assert b.shape == (6, 4) and c.shape == (6, 4) and delta.shape == (6, 3)
    assert np.all(delta.data > 0)

    # zero input: delta = softplus(dt_bias) uniformly
    zero_seq = ssm.ScanSequence(Tensor(np.zeros((5, 3))), ssm.ORDER_SPECTRAL_FORWARD)
    _, _, delta0 = s6.project_bcdelta(zero_seq)
    expected = np.logaddexp(0, s6.dt_bias.data)
    assert np.allclose(delta0.data, np.broadcast_to(expected, (5, 3)), atol=1e-12)

    # zero projection weights: B = C = 0
    s6.bc_proj.weight.data[:] = 0.0
    b, c, _ = s6.project_bcdelta(seq)
    assert np.array_equal(b.data, np.zeros_like(b.data))
    assert np.array_equal(c.data, np.zeros_like(c.data))


def test_project_bcdelta_width_mismatch(rng):
    s6 = ssm.SelectiveSSM(3, 4, rng)
    with pytest.raises(ShapeError, match="width"):
        s6.project_bcdelta(ssm.ScanSequence(Tensor(np.zeros((6, 5), dtype=np.float32)),
                                            ssm.ORDER_SPECTRAL_FORWARD))


def test_selective_scan_zero_everything(rng):
    s6 = ssm.SelectiveSSM(3, 4, rng, dtype=np.float64)
    s6.bc_proj.weight.data[:] = 0.0
    out = ssm.selective_scan(
        ssm.ScanSequence(Tensor(np.zeros((5, 3))), ssm.ORDER_SPECTRAL_FORWARD), s6
    )
    assert np.array_equal(out.data, np.zeros((5, 3)))


def test_selective_scan_gradients_all_parameters(rng):
    s6 = ssm.SelectiveSSM(2, 3, rng, dtype=np.float64)
    x = Tensor(rng.normal(size=(6, 2)))
    params = [p for _, p in s6.named_parameters()]
    w = Tensor(np.random.default_rng(3).normal(size=(6, 2)))

    def fn(x_, *ps):
        out = s6(ssm.ScanSequence(x_, ssm.ORDER_SPECTRAL_FORWARD))
        return ops.sum_all(ops.mul(out, w))

    err = gradcheck(fn, [x] + params)
    assert err <= 1e-4


def test_selective_scan_euler_flag_differs(rng):
    exact = ssm.SelectiveSSM(2, 3, rng, dtype=np.float64)
    euler = ssm.SelectiveSSM(2, 3, np.random.default_rng(0), euler=True, dtype=np.float64)
    for (_, pe), (_, pu) in zip(exact.named_parameters(), euler.named_parameters()):
        pu.data = pe.data.copy()
    x = Tensor(rng.normal(size=(5, 2)))
    y_exact = exact(ssm.ScanSequence(x, ssm.ORDER_SPECTRAL_FORWARD)).data
    y_euler = euler(ssm.ScanSequence(Tensor(x.data.copy()), ssm.ORDER_SPECTRAL_FORWARD)).data
    assert not np.allclose(y_exact, y_euler, atol=1e-9)
    assert np.allclose(y_exact, y_euler, atol=0.05)  # first-order agreement at small dt


def test_scan_sequence_validation():
    with pytest.raises(ValueError, match="ordering"):
        ssm.ScanSequence(Tensor(np.zeros((3, 2))), "diagonal")
    with pytest.raises(ShapeError):
        ssm.ScanSequence(Tensor(np.zeros(3)), ssm.ORDER_SPECTRAL_FORWARD)
