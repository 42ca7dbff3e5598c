from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from countbreak.models import (
    CountSeries,
    IngarchParams,
    ModelSpec,
    ParameterError,
    SeriesError,
    format_csv,
    mean_gradient_path,
    mean_hessian_path,
    parse_csv,
    simulate,
    simulate_with_change,
    stationary_mean,
    truncated_mean_path,
)


def reference_means(y, theta, p, q, t0, presample="fixed-point"):
    """Direct transcription of the truncated recursion."""
    a0, al, be = theta[0], theta[1:1 + p], theta[1 + p:]
    pre = a0 / (1 - be.sum()) if presample == "fixed-point" else 0.0
    lam = []
    for t in range(t0, len(y)):
        m = a0
        for i in range(p):
            s = t - 1 - i
            m += al[i] * (y[s] if s >= t0 else 0.0)
        for j in range(q):
            s = t - 1 - j
            m += be[j] * (lam[s - t0] if s >= t0 else pre)
        lam.append(m)
    return np.array(lam)


SPEC11 = ModelSpec(1, 1)
SPEC21 = ModelSpec(2, 1)


# --- validation -------------------------------------------------------------

def test_spec_parse():
    assert ModelSpec.parse("ingarch:1,1") == ModelSpec(1, 1)
    assert ModelSpec.parse("ingarch:2") == ModelSpec(2, 0)
    assert ModelSpec.parse("INGARCH:1,2", r=3.0).r == 3.0
    for bad in ("garch:1,1", "ingarch", "ingarch:1,2,3", "ingarch:0,0"):
        with pytest.raises(ValueError):
            ModelSpec.parse(bad)


def test_spec_rejects_bad_dispersion():
    with pytest.raises(ValueError):
        ModelSpec(1, 1, r=0.0)
    with pytest.raises(ValueError):
        ModelSpec(1, 1, r=float("inf"))


def test_param_check():
    IngarchParams.parse("0.4,0.15,0.2", SPEC11).check(SPEC11)
    with pytest.raises(ParameterError):
        IngarchParams.parse("0.4,0.6,0.4", SPEC11).check(SPEC11)
    with pytest.raises(ParameterError):
        IngarchParams.parse("0.4,-0.1,0.2", SPEC11).check(SPEC11)
    with pytest.raises(ParameterError):
        IngarchParams.parse("0,0.1,0.2", SPEC11).check(SPEC11)
    with pytest.raises(ParameterError):
        IngarchParams.parse("0.4,0.1", SPEC11)
    with pytest.raises(ParameterError):
        IngarchParams.parse("0.4,0.1,0.1,0.1", SPEC21).check(SPEC11)


def test_series_validation():
    with pytest.raises(SeriesError):
        CountSeries(np.array([1, -1]))
    with pytest.raises(SeriesError):
        CountSeries(np.array([1.5, 2.0]))
    with pytest.raises(SeriesError):
        CountSeries(np.array([], dtype=int))
    s = CountSeries(np.array([1.0, 2.0]), start_index=5)
    assert s.end_index == 6 and s.position(6) == 1
    with pytest.raises(IndexError):
        s.position(7)


def test_stationary_mean():
    assert stationary_mean(SPEC11, (0.4, 0.15, 0.2)) == pytest.approx(0.4 / 0.65)
    with pytest.raises(ParameterError):
        stationary_mean(SPEC11, (0.4, 0.5, 0.5))


# --- mean paths --------------------------------------------------------------

@pytest.mark.parametrize("presample", ["fixed-point", "zero"])
@pytest.mark.parametrize("spec,theta", [(SPEC11, (0.4, 0.15, 0.2)), (SPEC21, (1.0, 0.2, 0.1, 0.3)),
                                        (ModelSpec(1, 0), (2.0, 0.5)), (ModelSpec(0, 2), (1.0, 0.3, 0.2))])
def test_mean_path_matches_reference(spec, theta, presample):
    series = simulate(SPEC11, (1.0, 0.3, 0.2), 120, seed=3)
    for trunc in (1, 40):
        lam = truncated_mean_path(series, spec, theta, trunc_at=trunc, presample=presample)
        ref = reference_means(series.as_float(), np.array(theta), spec.p, spec.q, trunc - 1, presample)
        np.testing.assert_allclose(lam, ref, rtol=1e-13, atol=1e-13)


def test_zero_presample_starts_at_intercept():
    series = simulate(SPEC11, (0.4, 0.15, 0.2), 30, seed=1)
    lam = truncated_mean_path(series, SPEC11, (0.4, 0.15, 0.2), presample="zero")
    assert lam[0] == pytest.approx(0.4)


def test_simulated_means_follow_recursion():
    series, lam = simulate(SPEC11, (0.4, 0.15, 0.2), 200, burnin=0, seed=4, return_means=True)
    ref = reference_means(series.as_float(), np.array([0.4, 0.15, 0.2]), 1, 1, 0)
    np.testing.assert_allclose(lam, ref, rtol=1e-12)


def _fd(fun, x, h):
    out = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(out, axis=-1)


@pytest.mark.parametrize("presample", ["fixed-point", "zero"])
def test_gradient_and_hessian_paths_match_finite_differences(presample):
    series = simulate(SPEC21, (1.0, 0.2, 0.1, 0.3), 80, seed=9)
    theta = np.array([1.0, 0.2, 0.1, 0.3])
    kw = dict(trunc_at=5, presample=presample)
    grad = mean_gradient_path(series, SPEC21, theta, **kw)
    hess = mean_hessian_path(series, SPEC21, theta, **kw)
    fd_grad = _fd(lambda v: truncated_mean_path(series, SPEC21, v, **kw), theta, 1e-6)
    fd_hess = _fd(lambda v: mean_gradient_path(series, SPEC21, v, **kw), theta, 1e-6)
    np.testing.assert_allclose(grad, fd_grad, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(hess, fd_hess, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(hess, np.swapaxes(hess, 1, 2), atol=1e-12)


# --- simulation ---------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 200), r=st.sampled_from([None, 1.0, 3.0]))
def test_simulation_is_deterministic(seed, n, r):
    spec = ModelSpec(1, 1, r)
    a = simulate(spec, (0.4, 0.15, 0.2), n, burnin=50, seed=seed)
    b = simulate(spec, (0.4, 0.15, 0.2), n, burnin=50, seed=seed)
    assert np.array_equal(a.values, b.values)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 99))
def test_change_keeps_first_regime_prefix(seed, k):
    spec = ModelSpec(1, 1, 1.0)
    base = simulate(spec, (0.4, 0.15, 0.2), 100, burnin=30, seed=seed)
    changed = simulate_with_change(spec, (0.4, 0.15, 0.2), (0.4, 0.15, 0.5), k, 100,
                                   burnin=30, seed=seed)
    assert np.array_equal(base.values[:k], changed.values[:k])


def test_change_regime_means():
    series, lam = simulate_with_change(SPEC11, (0.4, 0.15, 0.2), (2.0, 0.15, 0.2), 50, 100,
                                       burnin=0, seed=2, return_means=True)
    y = series.as_float()
    k = 60
    assert lam[k] == pytest.approx(2.0 + 0.15 * y[k - 1] + 0.2 * lam[k - 1])
    assert lam[10] == pytest.approx(0.4 + 0.15 * y[9] + 0.2 * lam[9])


def test_simulation_rejects_nonstationary():
    with pytest.raises(ParameterError):
        simulate(SPEC11, (0.4, 0.6, 0.5), 10)
    with pytest.raises(ValueError):
        simulate_with_change(SPEC11, (0.4, 0.1, 0.2), (0.4, 0.1, 0.2), 10, 10)


@pytest.mark.parametrize("r", [None, 3.0])
def test_long_run_mean_and_dispersion(r):
    spec = ModelSpec(1, 0, r)
    series, lam = simulate(spec, (2.0, 0.5), 40_000, seed=11, return_means=True)
    y = series.as_float()
    assert y.mean() == pytest.approx(4.0, rel=0.03)
    resid_var = np.mean((y - lam) ** 2)
    expected = lam.mean() if r is None else np.mean(lam + lam**2 / r)
    assert resid_var == pytest.approx(expected, rel=0.05)


# --- CSV ----------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(values=st.lists(st.integers(0, 10**6), min_size=1, max_size=60),
       start=st.integers(-5, 1000), with_index=st.booleans())
def test_csv_roundtrip(values, start, with_index):
    s = CountSeries(np.array(values, dtype=np.int64), start)
    back = parse_csv(format_csv(s, with_index))
    assert np.array_equal(back.values, s.values)
    assert back.start_index == (start if with_index else 1)


def test_csv_header_and_errors():
    s = parse_csv("t,count\n10,3\n11,4\n")
    assert s.start_index == 10 and list(s.values) == [3, 4]
    for bad in ("", "count\n", "1\n-2\n", "1\nx\n", "1,2\n3\n", "1,2,3\n"):
        with pytest.raises(SeriesError):
            parse_csv(bad)
