"""Closed-end on-line monitoring for a change in the INGARCH parameter.

After calibrating on the historical sample ``Y_1..Y_m`` the monitor
receives one observation at a time.  At time ``k`` it refits the model on
every window ``ell..k`` with ``ell`` in ``Pi_{m,k} = {m - v', ..., k - v'}``
and computes

    D_{k,ell} = sqrt(m) (k - ell) / k * || I_m^{-1/2} J_m (theta(ell..k) - theta_m) ||.

An alarm is raised at the first ``k`` for which
``max_ell D_{k,ell} / b((k - ell) / m) > 1``.  Monitoring stops at the
horizon ``floor(T m) + 1``.
"""

from __future__ import annotations

import copy
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Literal

import numpy as np

from . import critvals
from .models import CountSeries, ModelSpec, as_series
from .pqmle import (
    DEFAULT_OPTIONS,
    FitError,
    FitOptions,
    Window,
    fit,
    fit_vector,
)

__all__ = [
    "CalibrationError",
    "ConstantBoundary",
    "MonitorConfig",
    "MonitorState",
    "MonitorRun",
    "MonitoringEnded",
    "calibrate",
    "detector",
    "pi_set",
    "run_closed_end",
    "step",
]

logger = logging.getLogger(__name__)

STATE_SCHEMA = "countbreak.monitor/1"
EIGEN_FLOOR = 1e-10


class CalibrationError(RuntimeError):
    """The historical sample cannot calibrate the monitor."""


class MonitoringEnded(RuntimeError):
    """Raised when stepping a stopped monitor or one past its horizon."""


@dataclass(frozen=True)
class ConstantBoundary:
    """``b(s) = c`` for all ``s > 0``."""

    c: float

    def __post_init__(self) -> None:
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"boundary constant must be positive and finite, got {self.c}")

    def __call__(self, s: float) -> float:
        return self.c


Boundary = Callable[[float], float]


@dataclass(frozen=True)
class MonitorConfig:
    """Settings of the closed-end monitor.

    ``boundary`` may be a positive constant, any callable ``b(s)`` that is
    positive and non-increasing, or ``None`` for the constant boundary at
    the Monte-Carlo quantile of the limiting functional.
    ``max_windows`` caps the number of windows per step by keeping a
    geometric grid of window lengths; ``None`` evaluates all of them.
    """

    T_horizon: float = 1.5
    delta_vprime: float = 2.0
    boundary: float | Boundary | None = None
    alpha: float = 0.05
    trunc: Literal["series-start", "window-start"] = "window-start"
    fit_options: FitOptions = DEFAULT_OPTIONS
    crit_grid: int = 10_000
    crit_paths: int = 100_000
    crit_seed: int = 20200729
    max_windows: int | None = None

    def __post_init__(self) -> None:
        if not (self.T_horizon > 1.0 and math.isfinite(self.T_horizon)):
            raise ValueError(f"T_horizon must be finite and > 1, got {self.T_horizon}")
        if not 2.0 <= self.delta_vprime <= 2.5:
            raise ValueError(f"delta_vprime must lie in [2, 2.5], got {self.delta_vprime}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.trunc not in ("series-start", "window-start"):
            raise ValueError(f"unknown truncation mode {self.trunc!r}")
        if isinstance(self.boundary, (int, float)) and not isinstance(self.boundary, bool):
            ConstantBoundary(float(self.boundary))
        if self.max_windows is not None and self.max_windows < 2:
            raise ValueError("max_windows must be at least 2")

    def critval_request(self, d: int) -> critvals.CritvalRequest:
        return critvals.CritvalRequest(
            d, self.alpha, critvals.UdT(self.T_horizon),
            self.crit_grid, self.crit_paths, self.crit_seed,
        )

    def resolve_boundary(self, d: int) -> tuple[Boundary, str | None]:
        b = self.boundary
        if b is None:
            req = self.critval_request(d)
            return ConstantBoundary(critvals.compute(req).value), req.key()
        if isinstance(b, (int, float)):
            return ConstantBoundary(float(b)), None
        return b, None


def horizon(m: int, T: float) -> int:
    """Last monitoring time ``floor(T m) + 1``."""
    return int(math.floor(T * m + 1e-9)) + 1


def v_prime(m: int, delta: float) -> int:
    return int(math.floor(math.log(m) ** delta))


def pi_set(m: int, k: int, vp: int) -> range:
    """Window starts ``{m - v', ..., k - v'}`` (1-based time labels)."""
    if k <= m:
        raise ValueError(f"monitoring time k={k} must exceed m={m}")
    return range(m - vp, k - vp + 1)


def _geometric_subset(starts: range, k: int, cap: int) -> list[int]:
    lengths = np.unique(np.round(np.geomspace(k - starts[-1], k - starts[0], cap)).astype(int))
    return sorted({k - int(n) for n in lengths})


def _inv_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    if w.min() < EIGEN_FLOOR * max(w.max(), 1.0):
        raise CalibrationError(
            f"information matrix is numerically singular (smallest eigenvalue {w.min():.3g})"
        )
    return (v / np.sqrt(w)) @ v.T


@dataclass
class MonitorState:
    """Mutable state of a running monitor; take :meth:`snapshot` to share."""

    spec: ModelSpec
    config: MonitorConfig
    m: int
    theta_m: np.ndarray
    J_m: np.ndarray
    I_m: np.ndarray
    normalizer: np.ndarray
    v_prime: int
    horizon: int
    boundary: Boundary
    critval_key: str | None = None
    k: int = 0
    trace: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    argmax_ell: list[int] = field(default_factory=list)
    failed: list[tuple[int, int]] = field(default_factory=list)
    stopped_at: int | None = None
    _y: np.ndarray = field(default=None, repr=False)
    _warm: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def stopped(self) -> bool:
        return self.stopped_at is not None

    @property
    def finished(self) -> bool:
        return self.stopped or self.k >= self.horizon

    @property
    def threshold(self) -> float | None:
        """Boundary constant, when the boundary is constant."""
        return self.boundary.c if isinstance(self.boundary, ConstantBoundary) else None

    @property
    def observations(self) -> np.ndarray:
        return self._y[: self.k].astype(np.int64)

    def snapshot(self) -> "MonitorState":
        return copy.deepcopy(self)

    def to_dict(self) -> dict[str, Any]:
        cfg = asdict(self.config)
        cfg["boundary"] = self.threshold if self.threshold is not None else repr(self.config.boundary)
        return {
            "schema": STATE_SCHEMA,
            "model": str(self.spec),
            "m": self.m,
            "k": self.k,
            "horizon": self.horizon,
            "v_prime": self.v_prime,
            "theta_m": self.theta_m.tolist(),
            "normalizer": self.normalizer.tolist(),
            "threshold": self.threshold,
            "critval_cache_key": self.critval_key,
            "stopped_at": self.stopped_at,
            "trace": [{"k": self.m + i + 1, "D_k": v} for i, v in enumerate(self.trace)],
            "failed_windows": [list(p) for p in self.failed],
            "config": cfg,
        }

    def trace_csv(self) -> str:
        out = io.StringIO()
        out.write("k,D_k\n")
        for i, v in enumerate(self.trace):
            out.write(f"{self.m + i + 1},{v!r}\n")
        return out.getvalue()


def calibrate(
    series_hist: CountSeries,
    spec: ModelSpec,
    config: MonitorConfig = MonitorConfig(),
) -> MonitorState:
    """Fit the historical sample and set up the detector normalisation."""
    hist = as_series(series_hist)
    m = len(hist)
    if m < 20 * spec.d:
        raise CalibrationError(f"need at least {20 * spec.d} historical observations, got {m}")
    vp = v_prime(m, config.delta_vprime)
    if not 1 <= vp < m:
        raise CalibrationError(f"v' = {vp} must lie in [1, m)")
    s0 = hist.start_index
    res = fit(hist, spec, Window(s0, s0 + m - 1), trunc_at=s0, opts=config.fit_options)
    if not res.converged:
        raise CalibrationError(
            f"historical fit did not converge (grad norm {res.grad_norm:.3g})"
        )
    normalizer = _inv_sqrt(res.I_hat) @ res.J_hat
    boundary, key = config.resolve_boundary(spec.d)
    hz = horizon(m, config.T_horizon)
    y = np.zeros(hz, dtype=np.float64)
    y[:m] = hist.as_float()
    return MonitorState(
        spec=spec,
        config=config,
        m=m,
        theta_m=res.theta_hat.vector.copy(),
        J_m=res.J_hat,
        I_m=res.I_hat,
        normalizer=normalizer,
        v_prime=vp,
        horizon=hz,
        boundary=boundary,
        critval_key=key,
        k=m,
        _y=y,
    )


def _window_fit(state: MonitorState, y: np.ndarray, k: int, ell: int, init):
    t0 = ell - 1 if state.config.trunc == "window-start" else 0
    return fit_vector(y, t0, ell - 1, k - 1, state.spec, init, state.config.fit_options)


def _distance(state: MonitorState, k: int, ell: int, theta: np.ndarray) -> float:
    z = state.normalizer @ (theta - state.theta_m)
    return math.sqrt(state.m) * (k - ell) / k * float(np.sqrt(z @ z))


def detector(
    state: MonitorState,
    series_full: CountSeries | np.ndarray,
    spec: ModelSpec,
    k: int,
    ell: int,
) -> float:
    """``D_{k,ell}`` computed from scratch on ``series_full`` (time labels from 1)."""
    y = as_series(series_full).as_float()
    if not state.m < k <= y.size:
        raise ValueError(f"k={k} must lie in ({state.m}, {y.size}]")
    if ell not in pi_set(state.m, k, state.v_prime):
        raise ValueError(f"ell={ell} is outside Pi_(m,k)")
    if spec != state.spec:
        raise ValueError("spec differs from the calibrated one")
    theta = _window_fit(state, y, k, ell, None)[0]
    return _distance(state, k, ell, theta)


def step(state: MonitorState, new_observation: int) -> tuple[MonitorState, str]:
    """Feed ``Y_{k+1}``; returns the state and ``"alarm"`` or ``"continue"``."""
    if state.stopped:
        raise MonitoringEnded(f"monitor already stopped at k={state.stopped_at}")
    if state.k >= state.horizon:
        raise MonitoringEnded(f"horizon {state.horizon} reached: no change detected")
    y_new = int(new_observation)
    if y_new < 0:
        raise ValueError(f"counts must be non-negative, got {y_new}")
    k = state.k + 1
    state._y[k - 1] = y_new
    state.k = k

    starts = pi_set(state.m, k, state.v_prime)
    cap = state.config.max_windows
    ells = list(starts) if cap is None or len(starts) <= cap else _geometric_subset(starts, k, cap)
    best_ratio, best_d, best_ell = -math.inf, 0.0, ells[0]
    warm = state._warm
    for ell in ells:
        init = warm.get(ell)
        if init is None:
            init = warm.get(ell - 1, state.theta_m)
        try:
            theta, _, _, conv, _, _ = _window_fit(state, state._y, k, ell, init)
        except FitError:
            state.failed.append((k, ell))
            continue
        if not conv:
            state.failed.append((k, ell))
            continue
        warm[ell] = theta
        dist = _distance(state, k, ell, theta)
        ratio = dist / state.boundary((k - ell) / state.m)
        if ratio > best_ratio:
            best_ratio, best_d, best_ell = ratio, dist, ell
    if best_ratio == -math.inf:
        best_ratio = 0.0
    state.trace.append(best_d)
    state.ratios.append(best_ratio)
    state.argmax_ell.append(best_ell)
    if best_ratio > 1.0:
        state.stopped_at = k
        return state, "alarm"
    return state, "continue"


@dataclass
class MonitorRun:
    state: MonitorState
    change_point: int | None = None

    @property
    def alarm(self) -> bool:
        return self.state.stopped

    @property
    def delay(self) -> int | None:
        """``tau - k*`` when a change point was supplied and an alarm rang."""
        if self.change_point is None or not self.alarm:
            return None
        return self.state.stopped_at - self.change_point

    @property
    def true_alarm(self) -> bool | None:
        if self.change_point is None or not self.alarm:
            return None
        return self.state.stopped_at > self.change_point

    def to_dict(self) -> dict[str, Any]:
        out = self.state.to_dict()
        out.update(
            {"alarm": self.alarm, "change_point": self.change_point,
             "delay": self.delay, "true_alarm": self.true_alarm}
        )
        return out


def run_closed_end(
    series_hist: CountSeries,
    stream: Iterable[int],
    spec: ModelSpec,
    config: MonitorConfig = MonitorConfig(),
    change_point: int | None = None,
    on_step: Callable[[MonitorState, str], None] | None = None,
) -> MonitorRun:
    """Calibrate, then step through ``stream`` until an alarm or the horizon."""
    state = calibrate(series_hist, spec, config)
    for obs in stream:
        if state.finished:
            break
        state, decision = step(state, obs)
        if on_step is not None:
            on_step(state, decision)
    return MonitorRun(state, change_point)
