import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_difference
from ratenorm.core import Param, Tensor, omega
from ratenorm.errors import DegenerateThresholdError, StateError
from ratenorm.rnl import (
    RateNormState,
    rnl_backward,
    rnl_forward,
    rnl_threshold,
    tie_shared_p,
    update_running_max,
)


def test_forward_train_mode_hand_arithmetic():
    s = RateNormState()
    r = rnl_forward(s, Tensor([0.2, 0.8]))
    assert s.running_max == pytest.approx(0.98, abs=1e-15)
    np.testing.assert_allclose(r.data, [0.2 / 0.98, 0.8 / 0.98], rtol=0, atol=1e-15)
    assert r.data[0] == pytest.approx(0.20408163265306123)


def test_forward_eval_rescaling_is_exact():
    s = RateNormState(running_max=2.5, mode="eval")
    s.set_p(0.8)
    u = np.array([0.0, 0.25, 0.5, 1.0])
    r = rnl_forward(s, Tensor(rnl_threshold(s) * u))
    np.testing.assert_allclose(r.data, u, rtol=0, atol=1e-15)
    assert s.running_max == 2.5


def test_forward_full_saturation():
    s = RateNormState(running_max=1.0, mode="eval")
    assert rnl_forward(s, Tensor([1.0, 3.0, 100.0])).data.tolist() == [1.0, 1.0, 1.0]


def test_degenerate_threshold():
    s = RateNormState(running_max=0.0, mode="eval")
    with pytest.raises(DegenerateThresholdError):
        rnl_forward(s, Tensor([0.5]))


def test_threshold_is_sigmoid_p_times_max():
    s = RateNormState(running_max=3.0)
    s.p_raw.data = np.asarray(0.7)
    s.locked = False
    assert rnl_threshold(s) == pytest.approx(3.0 / (1 + np.exp(-0.7)), abs=1e-15)
    s.locked = True
    assert rnl_threshold(s) == 3.0


def test_backward_before_forward():
    with pytest.raises(StateError):
        rnl_backward(RateNormState(), np.ones(2))


def test_zero_upstream_gives_zero():
    s = RateNormState(running_max=1.0, mode="eval")
    s.set_p(0.5)
    rnl_forward(s, Tensor([0.1, 0.3]))
    d_pre, d_p = rnl_backward(s, np.zeros(2))
    assert not d_pre.any() and d_p == 0.0


def test_rnl_backward_matches_autograd(rng):
    s = RateNormState(running_max=2.0, mode="eval")
    s.set_p(0.7)
    pre = Param(rng.uniform(-0.5, 2.0, size=8))
    up = rng.normal(size=8)
    (rnl_forward(s, pre) * Tensor(up)).sum().backward()
    d_pre, d_praw = rnl_backward(s, up)
    np.testing.assert_allclose(d_pre, pre.grad, atol=1e-15)
    assert d_praw == pytest.approx(float(s.p_raw.grad), rel=1e-12)


def test_p_raw_finite_differences(rng):
    s = RateNormState(running_max=1.5, mode="eval")
    s.set_p(0.6)
    pre = rng.uniform(0.05, 0.85, size=6)  # interior for p in a neighbourhood of 0.6
    up = rng.normal(size=6)
    (rnl_forward(s, Tensor(pre)) * Tensor(up)).sum().backward()
    analytic = float(s.p_raw.grad)

    def f(praw):
        p = 1 / (1 + np.exp(-praw[0]))
        theta = p * 1.5
        return np.sum(np.clip(pre, 0, theta) / theta * up)

    num = central_difference(f, np.array([float(s.p_raw.data)]), eps=1e-5)[0]
    assert abs(analytic - num) / max(abs(analytic), abs(num)) < 1e-4


def test_running_max_frozen_in_eval():
    s = RateNormState(running_max=1.0, mode="eval")
    rnl_forward(s, Tensor([5.0]))
    assert s.running_max == 1.0


def test_negative_batch_max_is_clamped():
    s = RateNormState(running_max=1.0)
    rnl_forward(s, Tensor([-3.0, -1.0]))
    assert s.running_max == pytest.approx(0.9)


def test_running_max_carries_no_gradient():
    s = RateNormState(running_max=1.0)
    pre = Param(np.array([0.2, 0.5]))
    rnl_forward(s, pre).sum().backward()
    # with the max path detached the gradient is exactly mask / theta
    np.testing.assert_allclose(pre.grad, np.full(2, 1 / s.running_max), atol=1e-15)


def test_set_p_rejects_out_of_range():
    with pytest.raises(ValueError):
        RateNormState().set_p(1.0)


def test_shared_p_accumulates_gradients():
    a, b = RateNormState(running_max=1.0, mode="eval"), RateNormState(running_max=2.0, mode="eval")
    shared = tie_shared_p([a, b], p_raw=0.3)
    a.locked = b.locked = False
    ra = rnl_forward(a, Tensor([0.3]))
    rb = rnl_forward(b, Tensor([0.4]))
    (ra.sum() + rb.sum()).backward()
    p = 1 / (1 + np.exp(-0.3))
    expected = (-ra.data[0] / p - rb.data[0] / p) * p * (1 - p)
    assert float(shared.grad) == pytest.approx(expected, rel=1e-12)
    assert a.p_raw is b.p_raw is shared


def test_tie_after_training_is_an_error():
    s = RateNormState()
    s.p_trained = True
    with pytest.raises(StateError):
        tie_shared_p([s])


def _interior(rng, n, theta):
    return rng.uniform(0.05 * theta, 0.95 * theta, size=n)


def test_omega_gradient_closed_form(rng):
    for _ in range(20):
        rmax = rng.uniform(0.5, 5.0)
        s = RateNormState(running_max=rmax, mode="eval")
        s.set_p(rng.uniform(0.2, 0.95))
        p = s.p
        pre = _interior(rng, 10, p * rmax)
        r = rnl_forward(s, Tensor(pre))
        omega(r).backward()
        analytic = float(s.p_raw.grad) / (p * (1 - p))
        closed = r.data.sum() / (p * np.sum(r.data**2))
        assert abs(analytic - closed) <= 1e-10 * max(1.0, abs(closed))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(0.2, 5.0), st.integers(0, 2**32 - 1))
def test_omega_increases_with_p(p0, rmax, seed):
    rng = np.random.default_rng(seed)
    s = RateNormState(running_max=rmax, mode="eval")
    theta0 = p0 * rmax
    pre = rng.uniform(0.01, 0.99, size=8) * theta0
    values = []
    for p in np.linspace(p0, min(0.999, p0 + 0.09), 5):
        s.set_p(p)
        values.append(omega(rnl_forward(s, Tensor(pre))).item())
    assert all(b > a for a, b in zip(values, values[1:]))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 100.0), st.floats(-50, 50))
def test_running_max_stays_non_negative(rmax, batch_max):
    s = RateNormState(running_max=rmax)
    assert update_running_max(s, batch_max) >= 0
