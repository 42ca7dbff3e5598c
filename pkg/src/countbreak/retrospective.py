"""Off-line test for a single change in the INGARCH parameter.

For every split point ``k`` in ``[v_n, n - v_n]`` the series is fitted on
``1..k`` and ``k+1..n`` and the two estimates are compared through

    C_{n,k} = k^2 (n-k)^2 / (n^3 q(k/n)^2) * D' Sigma(u_n) D,
    D = theta(1..k) - theta(k+1..n),

where ``Sigma(u_n)`` averages the sandwich matrices of the fits on
``1..u_n`` and ``u_n+1..n``.  The test rejects when ``max_k C_{n,k}``
exceeds the upper quantile of ``sup ||W_d(t)||^2 / q(t)^2`` over a
Brownian bridge.
"""

from __future__ import annotations

import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Literal

import numpy as np

from . import critvals
from .models import CountSeries, ModelSpec, as_series
from .pqmle import (
    DEFAULT_OPTIONS,
    FitOptions,
    FitResult,
    Window,
    fit,
    fit_vector,
)
from .weights import CONSTANT, WeightSpec, weight_q

__all__ = ["RetroConfig", "RetroReport", "scan", "sigma_un", "weight_q", "log_power_length"]

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "countbreak.retro/1"


def log_power_length(n: int, delta: float) -> int:
    """``floor((log n) ** delta)`` with the natural logarithm."""
    return int(math.floor(math.log(n) ** delta))


@dataclass(frozen=True)
class RetroConfig:
    """Settings of the retrospective test.

    ``critical_value`` overrides the Monte-Carlo quantile; the ``crit_*``
    fields define the Monte-Carlo request otherwise.  ``trunc`` selects
    whether right-hand windows condition on the data before them
    ("series-start") or start from a zeroed past ("window-start").
    """

    delta_u: float = 2.5
    delta_v: float = 2.0
    weight: WeightSpec = CONSTANT
    alpha: float = 0.05
    critical_value: float | None = None
    crit_grid: int = 10_000
    crit_paths: int = 100_000
    crit_seed: int = 20200729
    trunc: Literal["series-start", "window-start"] = "series-start"
    fit_options: FitOptions = DEFAULT_OPTIONS
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("delta_u", "delta_v"):
            val = getattr(self, name)
            if not 2.0 <= val <= 2.5:
                raise ValueError(f"{name} must lie in [2, 2.5], got {val}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.trunc not in ("series-start", "window-start"):
            raise ValueError(f"unknown truncation mode {self.trunc!r}")

    def critval_request(self, d: int) -> critvals.CritvalRequest:
        return critvals.CritvalRequest(
            d, self.alpha, critvals.BridgeSupSq(self.weight),
            self.crit_grid, self.crit_paths, self.crit_seed,
        )

    def resolve_critical_value(self, d: int) -> tuple[float, str | None]:
        if self.critical_value is not None:
            return float(self.critical_value), None
        req = self.critval_request(d)
        return critvals.compute(req).value, req.key()


@dataclass
class RetroReport:
    """Outcome of :func:`scan`.

    ``ks`` holds the split points (number of observations in the left
    window) and ``profile`` the matching statistics.
    """

    ks: np.ndarray
    profile: np.ndarray
    statistic: float
    critical_value: float
    reject: bool
    argmax: int
    t_hat: int | None
    u_n: int
    v_n: int
    sigma_un: np.ndarray
    nonconverged: list[int] = field(default_factory=list)
    sigma_flags: dict[str, bool] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def t_hat_label(self) -> int | None:
        """Breakpoint as a time label of the input series."""
        if self.t_hat is None:
            return None
        return self.config.get("start_index", 1) + self.t_hat - 1

    def profile_map(self) -> dict[int, float]:
        return {int(k): float(v) for k, v in zip(self.ks, self.profile)}

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": REPORT_SCHEMA,
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "reject": self.reject,
            "argmax": self.argmax,
            "t_hat": self.t_hat,
            "t_hat_label": self.t_hat_label,
            "u_n": self.u_n,
            "v_n": self.v_n,
            "sigma_un": self.sigma_un.tolist(),
            "sigma_flags": self.sigma_flags,
            "nonconverged": self.nonconverged,
            "config": self.config,
            "profile": [{"k": int(k), "value": float(v)} for k, v in zip(self.ks, self.profile)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("k,C_nk\n")
        for k, v in zip(self.ks, self.profile):
            out.write(f"{int(k)},{float(v)!r}\n")
        return out.getvalue()


def _sigma_un_fits(series, spec, u_n, trunc_at, opts):
    n = len(series)
    if not spec.d + 1 <= u_n <= n - spec.d - 1:
        raise ValueError(f"u_n={u_n} must lie in [{spec.d + 1}, {n - spec.d - 1}]")
    s0 = series.start_index
    left = fit(series, spec, Window(s0, s0 + u_n - 1), trunc_at=s0, opts=opts)
    right_trunc = s0 if trunc_at is None else trunc_at
    right = fit(series, spec, Window(s0 + u_n, s0 + n - 1), trunc_at=right_trunc, opts=opts)
    sigma = 0.5 * (left.Sigma_hat + right.Sigma_hat)
    return 0.5 * (sigma + sigma.T), left, right


def sigma_un(
    series: CountSeries,
    spec: ModelSpec,
    n: int | None = None,
    u_n: int | None = None,
    trunc_at: int | str | None = None,
    opts: FitOptions = DEFAULT_OPTIONS,
) -> np.ndarray:
    """Average of the sandwich matrices fitted on ``1..u_n`` and ``u_n+1..n``.

    ``trunc_at`` applies to the right-hand window (default: series start;
    ``"window"`` for window-start truncation).
    """
    series = as_series(series)
    if n is not None and n != len(series):
        series = series.head(n)
    if u_n is None:
        u_n = log_power_length(len(series), 2.5)
    return _sigma_un_fits(series, spec, u_n, trunc_at, opts)[0]


def _chain(y, spec, ks, left, t0_mode, n, opts):
    """Fits along the split points (left: ascending k).

    The previous split's estimate is tried alongside the deterministic
    starts; on its own it can trail the global maximum on flat surfaces.
    """
    out = np.empty((len(ks), spec.d))
    bad: list[int] = []
    theta = None
    order = range(len(ks)) if left else range(len(ks) - 1, -1, -1)
    for i in order:
        k = int(ks[i])
        if left:
            lo, hi, t0 = 0, k - 1, 0
        else:
            lo, hi = k, n - 1
            t0 = 0 if t0_mode == "series-start" else k
        theta, _, _, conv, _, _ = fit_vector(y, t0, lo, hi, spec, theta, opts, multistart=True)
        out[i] = theta
        if not conv:
            bad.append(k)
    return out, bad


def scan(
    series: CountSeries,
    spec: ModelSpec,
    config: RetroConfig = RetroConfig(),
) -> RetroReport:
    """Run the retrospective test on ``series``."""
    series = as_series(series)
    n = len(series)
    d = spec.d
    u_n = log_power_length(n, config.delta_u)
    v_n = max(log_power_length(n, config.delta_v), d + 2)
    if n < 2 * v_n + 2:
        raise ValueError(f"series of length {n} is too short for v_n={v_n}")
    opts = config.fit_options
    right_trunc = None if config.trunc == "series-start" else "window"
    sigma, fit_left, fit_right = _sigma_un_fits(series, spec, u_n, right_trunc, opts)

    y = series.as_float()
    ks = np.arange(v_n, n - v_n + 1)
    if config.workers > 1:
        with ThreadPoolExecutor(2) as pool:
            fut_l = pool.submit(_chain, y, spec, ks, True, config.trunc, n, opts)
            fut_r = pool.submit(_chain, y, spec, ks, False, config.trunc, n, opts)
            (th_l, bad_l), (th_r, bad_r) = fut_l.result(), fut_r.result()
    else:
        th_l, bad_l = _chain(y, spec, ks, True, config.trunc, n, opts)
        th_r, bad_r = _chain(y, spec, ks, False, config.trunc, n, opts)

    diff = th_l - th_r
    quad = np.einsum("ki,ij,kj->k", diff, sigma, diff)
    kf = ks.astype(float)
    scale = kf**2 * (n - kf) ** 2 / float(n) ** 3
    q = config.weight.values(kf / n)
    profile = scale * quad / q**2

    crit, crit_key = config.resolve_critical_value(d)
    i_max = int(np.argmax(profile))
    stat = float(profile[i_max])
    reject = stat > crit
    cfg = asdict(config)
    cfg["weight"] = config.weight.label()
    cfg["fit_options"] = {k: (asdict(v) if hasattr(v, "__dataclass_fields__") else v)
                          for k, v in asdict(config.fit_options).items()}
    cfg.update({"model": str(spec), "p": spec.p, "q": spec.q, "r": spec.r, "n": n,
                "start_index": series.start_index, "critval_cache_key": crit_key})
    return RetroReport(
        ks=ks,
        profile=profile,
        statistic=stat,
        critical_value=crit,
        reject=bool(reject),
        argmax=int(ks[i_max]),
        t_hat=int(ks[i_max]) if reject else None,
        u_n=u_n,
        v_n=v_n,
        sigma_un=sigma,
        nonconverged=sorted(set(bad_l) | set(bad_r)),
        sigma_flags={
            "left_converged": fit_left.converged,
            "right_converged": fit_right.converged,
            "left_I_singular": fit_left.I_singular,
            "right_I_singular": fit_right.I_singular,
        },
        config=cfg,
    )


def scan_with_sigma(series: CountSeries, spec: ModelSpec, sigma: np.ndarray,
                    config: RetroConfig = RetroConfig()) -> np.ndarray:
    """Profile for a user-supplied ``Sigma(u_n)`` (used for scaling checks)."""
    series = as_series(series)
    n = len(series)
    v_n = max(log_power_length(n, config.delta_v), spec.d + 2)
    y = series.as_float()
    ks = np.arange(v_n, n - v_n + 1)
    th_l, _ = _chain(y, spec, ks, True, config.trunc, n, config.fit_options)
    th_r, _ = _chain(y, spec, ks, False, config.trunc, n, config.fit_options)
    diff = th_l - th_r
    kf = ks.astype(float)
    return (kf**2 * (n - kf) ** 2 / float(n) ** 3
            * np.einsum("ki,ij,kj->k", diff, sigma, diff) / config.weight.values(kf / n) ** 2)
