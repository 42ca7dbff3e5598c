from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import sqrtm

from countbreak.models import CountSeries, ModelSpec, simulate, simulate_with_change
from countbreak.sequential import (
    CalibrationError,
    ConstantBoundary,
    MonitorConfig,
    MonitoringEnded,
    _geometric_subset,
    calibrate,
    detector,
    horizon,
    pi_set,
    run_closed_end,
    step,
    v_prime,
)

SPEC = ModelSpec(1, 0)
THETA = (1.0, 0.3)
M = 100


def cfg(boundary=3.0, **kw):
    return MonitorConfig(boundary=boundary, **kw)


@pytest.fixture(scope="module")
def stream_data():
    series = simulate_with_change(SPEC, THETA, (4.0, 0.3), 115, horizon(M, 1.5), seed=17)
    return series.values


@pytest.fixture(scope="module")
def full_run(stream_data):
    return run_closed_end(stream_data[:M], stream_data[M:], SPEC, cfg(boundary=1e6))


# --- bookkeeping ------------------------------------------------------------------

def test_window_constants():
    assert v_prime(1000, 2.0) == 47
    assert horizon(500, 1.5) == 751
    assert horizon(130, 1.5) == 196


@settings(max_examples=200)
@given(m=st.integers(20, 5000), extra=st.integers(1, 5000), delta=st.floats(2.0, 2.5))
def test_pi_set_cardinality(m, extra, delta):
    vp = v_prime(m, delta)
    k = m + extra
    pi = pi_set(m, k, vp)
    assert len(pi) == k - m + 1
    assert pi[0] == m - vp and pi[-1] == k - vp
    assert min(k - ell for ell in (pi[0], pi[-1])) >= vp


def test_pi_set_requires_monitoring_time():
    with pytest.raises(ValueError):
        pi_set(100, 100, 5)


def test_config_validation():
    for kw in ({"T_horizon": 1.0}, {"delta_vprime": 1.5}, {"alpha": 1.0}, {"trunc": "x"},
               {"boundary": -1.0}, {"max_windows": 1}):
        with pytest.raises(ValueError):
            MonitorConfig(**kw)


# --- calibration ------------------------------------------------------------------

def test_calibrate_requires_enough_history():
    with pytest.raises(CalibrationError):
        calibrate(CountSeries(np.arange(30) % 4), SPEC, cfg())


def test_calibrate_rejects_singular_information():
    with pytest.raises(CalibrationError):
        calibrate(CountSeries(np.ones(200, dtype=int)), SPEC, cfg())


def test_calibration_is_deterministic(stream_data):
    a = calibrate(stream_data[:M], SPEC, cfg())
    b = calibrate(stream_data[:M], SPEC, cfg())
    assert np.array_equal(a.theta_m, b.theta_m) and np.array_equal(a.normalizer, b.normalizer)
    assert a.v_prime == v_prime(M, 2.0) and a.horizon == horizon(M, 1.5)
    assert a.threshold == 3.0 and a.k == M


def test_normalizer_under_poisson_truth():
    spec = ModelSpec(1, 1)
    hist = simulate(spec, (0.4, 0.15, 0.2), 5000, seed=31)
    state = calibrate(hist, spec, cfg())
    target = np.real(sqrtm(state.J_m))
    rel = np.linalg.norm(state.normalizer - target) / np.linalg.norm(target)
    assert rel < 0.1


def test_normalizer_definition(stream_data):
    st_ = calibrate(stream_data[:M], SPEC, cfg())
    w, v = np.linalg.eigh(st_.I_m)
    np.testing.assert_allclose(st_.normalizer, (v / np.sqrt(w)) @ v.T @ st_.J_m, rtol=1e-10)


# --- detector ---------------------------------------------------------------------

def test_detector_matches_step(stream_data):
    state = calibrate(stream_data[:M], SPEC, cfg(boundary=1e6))
    for obs in stream_data[M:M + 5]:
        state, _ = step(state, obs)
    k = state.k
    ell = state.argmax_ell[-1]
    value = detector(state, stream_data[:k], SPEC, k, ell)
    assert value >= 0
    assert value == pytest.approx(state.trace[-1], rel=1e-5)


def test_detector_domain(stream_data):
    state = calibrate(stream_data[:M], SPEC, cfg())
    with pytest.raises(ValueError):
        detector(state, stream_data, SPEC, M, M - 1)
    with pytest.raises(ValueError):
        detector(state, stream_data, SPEC, M + 5, M + 5)
    with pytest.raises(ValueError):
        detector(state, stream_data, ModelSpec(1, 1), M + 5, M)


def test_detector_zero_when_estimates_coincide(stream_data):
    # with window-start truncation a window holding a copy of the history
    # reproduces the historical estimate exactly
    doubled = np.concatenate([stream_data[:M], stream_data[:M]])
    state = calibrate(doubled[:M], SPEC, cfg(trunc="window-start"))
    assert detector(state, doubled, SPEC, 2 * M, M + 1) == pytest.approx(0.0, abs=1e-4)


# --- stopping time ------------------------------------------------------------------

def test_trace_length_and_horizon(full_run):
    st_ = full_run.state
    assert not full_run.alarm and st_.k == st_.horizon
    assert len(st_.trace) == st_.k - st_.m == len(st_.ratios)
    assert all(d >= 0 for d in st_.trace)
    assert full_run.delay is None


@settings(max_examples=6, deadline=None)
@given(cut=st.integers(1, 50), noise_seed=st.integers(0, 1000))
def test_stopping_time_uses_only_the_past(stream_data, full_run, cut, noise_seed):
    rng = np.random.default_rng(noise_seed)
    altered = stream_data.copy()
    altered[M + cut:] = rng.poisson(20, altered.size - M - cut)
    run = run_closed_end(altered[:M], altered[M:M + cut], SPEC, cfg(boundary=1e6))
    assert run.state.trace == full_run.state.trace[:cut]


@settings(max_examples=5, deadline=None)
@given(c1=st.floats(0.5, 4.0), bump=st.floats(0.0, 3.0))
def test_higher_boundary_never_alarms_earlier(stream_data, c1, bump):
    low = run_closed_end(stream_data[:M], stream_data[M:], SPEC, cfg(boundary=c1))
    high = run_closed_end(stream_data[:M], stream_data[M:], SPEC, cfg(boundary=c1 + bump))
    t_low = low.state.stopped_at or math.inf
    t_high = high.state.stopped_at or math.inf
    assert t_high >= t_low


def test_first_exceedance_is_the_stopping_time(stream_data, full_run):
    c = float(np.quantile(full_run.state.trace, 0.8))
    run = run_closed_end(stream_data[:M], stream_data[M:], SPEC, cfg(boundary=c))
    first = next(i for i, d in enumerate(full_run.state.trace) if d > c)
    assert run.state.stopped_at == M + first + 1
    assert run.delay is None and run.true_alarm is None


def test_huge_boundary_never_alarms(full_run):
    assert full_run.state.stopped_at is None


def test_change_is_detected_and_delay_reported(stream_data):
    run = run_closed_end(stream_data[:M], stream_data[M:], SPEC, cfg(boundary=2.0), change_point=115)
    assert run.alarm
    assert run.delay == run.state.stopped_at - 115
    assert run.true_alarm == (run.state.stopped_at > 115)
    out = run.to_dict()
    assert out["delay"] == run.delay and out["schema"] == "countbreak.monitor/1"
    json.dumps(out)


def test_step_errors(stream_data):
    state = calibrate(stream_data[:M], SPEC, cfg(boundary=1e-6))
    with pytest.raises(ValueError):
        step(state, -1)
    state, decision = step(state, 5)
    assert decision == "alarm"
    with pytest.raises(MonitoringEnded):
        step(state, 5)
    state = calibrate(stream_data[:M], SPEC, cfg(boundary=1e6, T_horizon=1.05))
    for obs in stream_data[M:state.horizon]:
        step(state, obs)
    with pytest.raises(MonitoringEnded):
        step(state, 1)


def test_snapshot_is_independent(stream_data):
    state = calibrate(stream_data[:M], SPEC, cfg(boundary=1e6))
    step(state, stream_data[M])
    snap = state.snapshot()
    step(state, stream_data[M + 1])
    assert snap.k == M + 1 and len(snap.trace) == 1 and state.k == M + 2


def test_callable_boundary(stream_data):
    def boundary(s):
        return 2.0 + 1.0 / (1.0 + s)

    run = run_closed_end(stream_data[:M], stream_data[M:], SPEC, cfg(boundary=boundary))
    st_ = run.state
    assert st_.threshold is None
    for i, r in enumerate(st_.ratios):
        k = M + i + 1
        assert r == pytest.approx(st_.trace[i] / boundary((k - st_.argmax_ell[i]) / M))
    assert run.alarm == (max(st_.ratios) > 1)
    const = run_closed_end(stream_data[:M], stream_data[M:], SPEC, cfg(boundary=ConstantBoundary(2.5)))
    assert const.state.threshold == 2.5


def test_geometric_window_subset():
    starts = pi_set(100, 140, 21)
    picked = _geometric_subset(starts, 140, 4)
    assert picked[0] == starts[0] and picked[-1] == starts[-1]
    assert len(picked) <= 4 and all(ell in starts for ell in picked)


def test_max_windows_run(stream_data, full_run):
    run = run_closed_end(stream_data[:M], stream_data[M:], SPEC, cfg(boundary=1e6, max_windows=4))
    assert len(run.state.trace) == len(full_run.state.trace)
    assert all(d >= 0 and math.isfinite(d) for d in run.state.trace)
    assert run.state.trace[0] == pytest.approx(full_run.state.trace[0], rel=1e-6)


def test_trace_csv_and_dict(full_run):
    csv_text = full_run.state.trace_csv().splitlines()
    assert csv_text[0] == "k,D_k" and csv_text[1].startswith(f"{M + 1},")
    out = full_run.state.to_dict()
    assert out["trace"][0]["k"] == M + 1 and len(out["trace"]) == len(full_run.state.trace)


def test_series_start_truncation(stream_data):
    run = run_closed_end(stream_data[:M], stream_data[M:], SPEC, cfg(boundary=1e6, trunc="series-start"))
    assert len(run.state.trace) == run.state.horizon - M
