import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import WORKED_FLOWS, WORKED_TEMPS, make_pipe
from hydrodispatch.network import Constants, FlowHistory
from hydrodispatch.pipeline import (
    WindowTooShallow,
    fill_weights,
    nm_outlet,
    nm_state,
    plugflow_oracle,
    steady_loss_factor,
    steady_outlet,
    weights_from_window,
    wmm_lossless,
    wmm_outlet,
)
from oracles import enumerate_weights

DT = 3600.0
C = Constants()

# exact lossless outlet of the worked example from mass bookkeeping: the pipe
# holds 875 t; the current hour's inflow fills 432.756 t of it, the 100 degC
# parcel the rest, so the outflow is the older part of that parcel plus the
# front of the 90 degC parcel
_CUR = 120.21 * 3600
_REST_100 = 185.52 * 3600 - (875_000 - _CUR)
_FROM_90 = _CUR - _REST_100
T1_LOSSLESS = (_REST_100 * 100 + _FROM_90 * 90) / _CUR


def test_worked_pipe_weights(worked_pipe):
    pipe, hist = worked_pipe
    w = fill_weights(pipe, hist, 0, DT, C)
    np.testing.assert_allclose(w.alpha, [1, 0.6621, 0, 0], atol=1e-4)
    np.testing.assert_allclose(w.beta, [1, 1, 0.5061, 0], atol=1e-4)


def test_worked_pipe_nm_coefficients(worked_pipe):
    pipe, hist = worked_pipe
    res, state = nm_outlet(pipe, hist, 0, DT, C)
    # K listed oldest first in the example (k = 9..12); here index = periods back
    np.testing.assert_allclose(state.K[::-1], [0, 0.4786, 0.5214, 0], atol=1e-4)
    assert res.transit_estimate == pytest.approx(1.5 * 3600, abs=1e-9)


def test_worked_pipe_lossless_matches_hand_value(worked_pipe):
    pipe, hist = worked_pipe
    w = fill_weights(pipe, hist, 0, DT, C)
    assert wmm_lossless(pipe, hist, w, 0) == pytest.approx(T1_LOSSLESS, abs=1e-9)
    assert nm_outlet(pipe, hist, 0, DT, C)[0].t_lossless == pytest.approx(T1_LOSSLESS, abs=1e-9)
    assert T1_LOSSLESS == pytest.approx(95.2137, abs=1e-4)


def test_worked_pipe_outlet_with_losses(worked_pipe):
    pipe, hist = worked_pipe
    res = wmm_outlet(pipe, hist, 0, DT, C)
    assert abs(res.t_out - 95.194) < 0.01
    assert res.t_out < res.t_lossless
    # transit from the sums of the weights: (1.6621 + 1.5061) / 2 periods
    assert res.transit_estimate / 3600 == pytest.approx((1.6621 + 1.5061) / 2, abs=1e-3)


def test_zero_loss_coefficient(worked_pipe):
    pipe, hist = worked_pipe
    import dataclasses

    lossless = dataclasses.replace(pipe, heat_transfer_coeff=0.0)
    res = wmm_outlet(lossless, hist, 0, DT, C)
    assert res.t_out == res.t_lossless


def test_one_period_transit():
    content = 0.5 * 1750 * 1e3
    m = content / DT
    w = weights_from_window(np.full(4, m), DT, content)
    np.testing.assert_array_equal(w.alpha, [1, 0, 0, 0])
    np.testing.assert_array_equal(w.beta, [1, 1, 0, 0])
    st_ = nm_state(np.full(4, m), DT, content)
    assert st_.gamma in (0, 1)
    # the parcel that entered one period ago leaves whole
    assert st_.K[1] == pytest.approx(1.0)


def test_constant_inlet_gives_constant_outlet(worked_pipe):
    pipe, _ = worked_pipe
    hist = FlowHistory(WORKED_FLOWS, np.full(4, 73.0), depth=3)
    w = fill_weights(pipe, hist, 0, DT, C)
    assert wmm_lossless(pipe, hist, w, 0) == pytest.approx(73.0, rel=1e-14)


def test_shallow_window_rejected():
    with pytest.raises(WindowTooShallow):
        weights_from_window(np.full(3, 10.0), DT, 1e9)


def test_nonpositive_flow_rejected():
    with pytest.raises(ValueError):
        weights_from_window(np.array([10.0, 0.0, 10.0]), DT, 1e3)


def test_steady_outlet_hand_value():
    pipe = make_pipe()
    # residence time rho A L / m at decay rate lambda / (A rho c)
    expected = 10 + 100 * math.exp(-(0.12 / (0.5 * 1e3 * 4.2e3)) * (1e3 * 0.5 * 1750 / 120.21))
    assert steady_outlet(pipe, 120.21, 110.0, 10.0, C) == pytest.approx(expected, rel=1e-15)
    assert steady_outlet(pipe, 120.21, 10.0, 10.0, C) == 10.0
    assert steady_outlet(pipe, 1e9, 110.0, 10.0, C) == pytest.approx(110.0, abs=1e-7)
    with pytest.raises(ValueError):
        steady_outlet(pipe, 0.0, 110.0, 10.0, C)


def test_wmm_steady_limit():
    m = 97.3
    content = 1e3 * 0.5 * 1750
    depth = math.ceil(content / (m * DT)) + 2
    pipe = make_pipe(depth=depth, flows=np.full(depth, m), temps=np.full(depth, 90.0))
    hist = FlowHistory(np.full(depth + 1, m), np.full(depth + 1, 90.0), depth)
    res = wmm_outlet(pipe, hist, 0, DT, C)
    factor = (res.t_out - 10.0) / (res.t_lossless - 10.0)
    assert factor == pytest.approx(steady_loss_factor(pipe, m, C), abs=1e-6)


def test_plugflow_constant_matches_steady():
    m, t_in = 80.0, 95.0
    pipe = make_pipe(depth=8)
    out = plugflow_oracle(pipe, np.full(12, m), np.full(12, t_in), DT, substeps=2000, constants=C, ambient=10.0)
    expected = steady_outlet(pipe, m, t_in, 10.0, C)
    valid = out[~np.isnan(out)]
    assert valid.size > 0
    np.testing.assert_allclose(valid, expected, atol=1e-4)


def test_plugflow_step_arrival():
    # step in the inlet temperature shows up after rho A L / m seconds
    dt = 60.0
    m = 100.0
    pipe = make_pipe(lam=0.0, length=120.0, area=0.5)  # 60 t of water, 600 s transit
    n = 40
    temps = np.where(np.arange(n) >= 20, 90.0, 50.0)
    out = plugflow_oracle(pipe, np.full(n, m), temps, dt, substeps=1000, constants=C, ambient=10.0)
    first_hot = int(np.flatnonzero(out > 89.999)[0])
    assert first_hot == 20 + 10
    assert out[29] == pytest.approx(50.0)


def test_plugflow_worked_pipe_lossless():
    pipe = make_pipe(lam=0.0)
    out = plugflow_oracle(pipe, WORKED_FLOWS, WORKED_TEMPS, DT, substeps=10_000, constants=C, ambient=10.0)
    assert out[3] == pytest.approx(T1_LOSSLESS, abs=1e-3)


def test_monotone_in_loss_coefficient(worked_pipe):
    import dataclasses

    pipe, hist = worked_pipe
    outs = [wmm_outlet(dataclasses.replace(pipe, heat_transfer_coeff=lam), hist, 0, DT, C).t_out for lam in (0.0, 0.1, 0.5, 2.0)]
    assert all(a > b for a, b in zip(outs, outs[1:]))


def _history(rng, depth, lo=20.0, hi=200.0):
    flows = rng.uniform(lo, hi, depth + 1)
    temps = rng.uniform(40.0, 120.0, depth + 1)
    return flows, temps


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 8))
def test_weight_invariants(seed, depth):
    rng = np.random.default_rng(seed)
    flows = rng.uniform(10.0, 300.0, depth + 1)
    masses = flows * DT
    content = rng.uniform(0.05, 0.999) * masses[1:].sum()
    w = weights_from_window(flows, DT, content)
    for v in (w.alpha, w.beta):
        assert np.all((v >= 0) & (v <= 1))
        # step pattern (1 - v_k) v_{k+1} = 0
        assert np.all((1 - v[:-1]) * v[1:] == 0)
    assert w.beta[0] == 1.0
    assert np.dot(w.alpha, masses) == pytest.approx(content, rel=1e-12)
    assert np.dot(w.beta[1:], masses[1:]) == pytest.approx(content, rel=1e-12)
    assert np.all(w.beta >= w.alpha)
    assert np.dot(w.beta - w.alpha, masses) == pytest.approx(masses[0], rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 8))
def test_fill_matches_pattern_enumeration(seed, depth):
    rng = np.random.default_rng(seed)
    flows = rng.uniform(10.0, 300.0, depth + 1)
    masses = flows * DT
    content = rng.uniform(0.05, 0.999) * masses[1:].sum()
    w = weights_from_window(flows, DT, content)
    alphas = enumerate_weights(masses, content)
    betas = enumerate_weights(masses[1:], content)
    assert len(alphas) == 1 and len(betas) == 1
    np.testing.assert_allclose(w.alpha, alphas[0], atol=1e-12)
    np.testing.assert_allclose(w.beta[1:], betas[0], atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 12))
def test_wmm_equals_nm(seed, depth):
    rng = np.random.default_rng(seed)
    flows, temps = _history(rng, depth)
    content = rng.uniform(0.05, 0.999) * flows[1:].sum() * DT
    assume(content > 0)
    w = weights_from_window(flows, DT, content)
    t_wmm = float(np.dot(w.exit_weights * flows, temps) / flows[0])
    t_nm = float(np.dot(nm_state(flows, DT, content).K, temps))
    assert abs(t_wmm - t_nm) <= 1e-9 * abs(t_nm)
    assert temps.min() - 1e-9 <= t_wmm <= temps.max() + 1e-9


def smooth_profile(rng, n, base, amp):
    t = np.arange(n)
    ph = rng.uniform(0, 2 * np.pi, 3)
    per = rng.uniform(20, 80, 3)
    return base + amp * sum(np.sin(2 * np.pi * t / p + f) for p, f in zip(per, ph)) / 3


def wmm_series(pipe, flows, temps, dt, start):
    hist = FlowHistory(flows, temps, depth=pipe.history_depth)
    return np.array([wmm_outlet(pipe, hist, tau, dt, C).t_out for tau in range(start - pipe.history_depth, len(flows) - pipe.history_depth)])


def test_plugflow_agreement_smooth_profiles():
    rng = np.random.default_rng(2024)
    dt = 180.0
    for _ in range(3):
        n = 120
        flows = smooth_profile(rng, n, 60.0, 15.0)
        temps = smooth_profile(rng, n, 90.0, 10.0)
        pipe = make_pipe(length=2000.0, area=0.3, lam=0.4, depth=1)
        depth = math.ceil(pipe.water_mass(C.rho) / (flows.min() * dt)) + 1
        pipe = make_pipe(length=2000.0, area=0.3, lam=0.4, depth=depth, flows=flows, temps=temps)
        ref = plugflow_oracle(pipe, flows, temps, dt, substeps=10_000, constants=C, ambient=10.0, first=depth)
        got = wmm_series(pipe, flows, temps, dt, depth)
        mask = ~np.isnan(ref[depth:])
        assert np.max(np.abs(got[mask] - ref[depth:][mask])) <= 0.05
