"""Poisson quasi-maximum-likelihood estimation on time windows.

For a window ``T = {lo, ..., hi}`` the approximate quasi-log-likelihood is

    L(T, theta) = sum_{t in T} Y_t log lambda_t(theta) - lambda_t(theta)

with ``lambda_t`` the truncated conditional mean.  :func:`fit` maximises
it over the parameter region and returns the plug-in matrices

    J(T) = mean_t  (1 / lambda_t)              g_t g_t'
    I(T) = mean_t  (Y_t / lambda_t - 1)^2      g_t g_t'
    Sigma(T) = J I^{-1} J

where ``g_t`` is the parameter gradient of ``lambda_t`` at the estimate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from ._backend import kernels
from .models import (
    DEFAULT_SPACE,
    CountSeries,
    IngarchParams,
    ModelSpec,
    ParamSpace,
    Presample,
    _as_params,
    presample_code,
)

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)


class FitError(RuntimeError):
    """A window is too short or otherwise cannot be fitted."""


@dataclass(frozen=True)
class Window:
    """Inclusive range of time indices ``lo..hi``."""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"empty window [{self.lo}, {self.hi}]")

    def __len__(self) -> int:
        return self.hi - self.lo + 1

    def positions(self, series: CountSeries) -> tuple[int, int]:
        return series.position(self.lo), series.position(self.hi)


@dataclass(frozen=True)
class FitOptions:
    """Optimizer and plug-in settings.

    ``tol_grad`` is per observation: a fit has converged when the sup-norm
    of the projected score is at most ``tol_grad * |T|``.
    """

    tol_grad: float = 1e-6
    max_iter: int = 500
    presample: Presample = "fixed-point"
    space: ParamSpace = DEFAULT_SPACE
    pinv_rcond: float = 1e-10


DEFAULT_OPTIONS = FitOptions()


@dataclass
class FitResult:
    """Estimate on one window plus its plug-in matrices."""

    theta_hat: IngarchParams
    loglik: float
    J_hat: NDArray[np.float64]
    I_hat: NDArray[np.float64]
    Sigma_hat: NDArray[np.float64]
    converged: bool
    iterations: int
    grad_norm: float
    window: Window
    trunc_at: int
    I_singular: bool = False
    starts: int = 1
    spec: ModelSpec | None = field(default=None, repr=False)

    @property
    def nobs(self) -> int:
        return len(self.window)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "theta_hat": self.theta_hat.vector.tolist(),
            "loglik": self.loglik,
            "J_hat": self.J_hat.tolist(),
            "I_hat": self.I_hat.tolist(),
            "Sigma_hat": self.Sigma_hat.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "window": [self.window.lo, self.window.hi],
            "trunc_at": self.trunc_at,
            "I_singular": self.I_singular,
            "starts": self.starts,
        }
        try:
            out["sandwich_se"] = sandwich_se(self).tolist()
        except np.linalg.LinAlgError:
            out["sandwich_se"] = None
        return out


def _resolve(series: CountSeries, window: Window, trunc_at: int | None) -> tuple[int, int, int]:
    lo, hi = window.positions(series)
    t0 = lo if trunc_at == "window" else series.position(
        series.start_index if trunc_at is None else trunc_at
    )
    if t0 > lo:
        raise ValueError(f"truncation point {trunc_at} is after the window start {window.lo}")
    return t0, lo, hi


def _checked_theta(theta, spec, space) -> NDArray[np.float64]:
    params = _as_params(theta, spec)
    params.check(spec, space)
    return params.vector


def quasi_loglik(
    series: CountSeries,
    spec: ModelSpec,
    window: Window,
    theta: IngarchParams | ArrayLike,
    trunc_at: int | None = None,
    *,
    presample: Presample = "fixed-point",
    space: ParamSpace = DEFAULT_SPACE,
) -> float:
    """Poisson quasi-log-likelihood of ``window`` (``0 log 0 := 0``)."""
    t0, lo, hi = _resolve(series, window, trunc_at)
    ll, *_ = kernels.window_stats(
        series.as_float(), t0, lo, hi, _checked_theta(theta, spec, space),
        spec.p, spec.q, presample_code(presample), False,
    )
    return float(ll)


def score(
    series: CountSeries,
    spec: ModelSpec,
    window: Window,
    theta: IngarchParams | ArrayLike,
    trunc_at: int | None = None,
    *,
    presample: Presample = "fixed-point",
    space: ParamSpace = DEFAULT_SPACE,
) -> NDArray[np.float64]:
    """Gradient of :func:`quasi_loglik`: ``sum (Y_t/lambda_t - 1) dlambda_t``."""
    t0, lo, hi = _resolve(series, window, trunc_at)
    _, sc, *_ = kernels.window_stats(
        series.as_float(), t0, lo, hi, _checked_theta(theta, spec, space),
        spec.p, spec.q, presample_code(presample), False,
    )
    return sc


def neg_hessian(
    series: CountSeries,
    spec: ModelSpec,
    window: Window,
    theta: IngarchParams | ArrayLike,
    trunc_at: int | None = None,
    *,
    presample: Presample = "fixed-point",
    space: ParamSpace = DEFAULT_SPACE,
) -> NDArray[np.float64]:
    """Negative second derivative of :func:`quasi_loglik`.

    ``sum (Y_t / lambda_t^2) g_t g_t' - (Y_t / lambda_t - 1) H_t`` where
    ``H_t`` is the Hessian of ``lambda_t`` from the second-order recursion.
    """
    t0, lo, hi = _resolve(series, window, trunc_at)
    *_, nh = kernels.window_stats(
        series.as_float(), t0, lo, hi, _checked_theta(theta, spec, space),
        spec.p, spec.q, presample_code(presample), True,
    )
    return nh


def info_matrices(
    series: CountSeries,
    spec: ModelSpec,
    window: Window,
    theta: IngarchParams | ArrayLike,
    trunc_at: int | None = None,
    *,
    presample: Presample = "fixed-point",
    space: ParamSpace = DEFAULT_SPACE,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Plug-in ``(J, I)`` for ``window`` evaluated at ``theta``."""
    t0, lo, hi = _resolve(series, window, trunc_at)
    _, _, jsum, isum, _ = kernels.window_stats(
        series.as_float(), t0, lo, hi, _checked_theta(theta, spec, space),
        spec.p, spec.q, presample_code(presample), False,
    )
    n = hi - lo + 1
    return jsum / n, isum / n


def pinv_psd(mat: NDArray[np.float64], rcond: float = 1e-10) -> tuple[NDArray[np.float64], bool]:
    """Moore-Penrose inverse of a symmetric PSD matrix.

    Eigenvalues below ``rcond * max_eigenvalue`` are dropped.  The flag is
    True when anything was dropped.
    """
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    top = max(float(w.max(initial=0.0)), 0.0)
    keep = w > rcond * top if top > 0 else np.zeros_like(w, dtype=bool)
    inv_w = np.zeros_like(w)
    inv_w[keep] = 1.0 / w[keep]
    return (v * inv_w) @ v.T, bool(not keep.all())


def sandwich_matrix(
    J: NDArray[np.float64], I: NDArray[np.float64], rcond: float = 1e-10
) -> tuple[NDArray[np.float64], bool]:
    """``J I^+ J`` and a flag telling whether ``I`` was singular."""
    i_inv, singular = pinv_psd(I, rcond)
    sigma = J @ i_inv @ J
    return 0.5 * (sigma + sigma.T), singular


def starting_points(y_window: NDArray[np.float64], spec: ModelSpec, space: ParamSpace) -> list[NDArray[np.float64]]:
    """Deterministic fan of feasible starts.

    The intercept matches the window mean for each total feedback weight in
    {0, 0.2, 0.5}; non-zero weight is split 3:1 and 1:3 between the count
    lags and the mean lags (and spread evenly within each group).
    """
    ybar = float(np.mean(y_window)) if y_window.size else 1.0
    starts: list[NDArray[np.float64]] = []
    for total in (0.0, 0.2, 0.5):
        splits = (0.75, 0.25) if total > 0 else (0.5,)
        for share in splits:
            if spec.p == 0:
                a_share = 0.0
            elif spec.q == 0:
                a_share = 1.0
            else:
                a_share = share
            a_total = total * a_share
            b_total = total - a_total
            vec = np.empty(spec.d)
            vec[0] = min(max(ybar * (1.0 - total), space.c_min), space.a0_max)
            vec[1:1 + spec.p] = a_total / spec.p if spec.p else 0.0
            vec[1 + spec.p:] = b_total / spec.q if spec.q else 0.0
            if not any(np.array_equal(vec, s) for s in starts):
                starts.append(vec)
    return starts


def fit_vector(
    y: NDArray[np.float64],
    t0: int,
    lo: int,
    hi: int,
    spec: ModelSpec,
    init: NDArray[np.float64] | None = None,
    opts: FitOptions = DEFAULT_OPTIONS,
    multistart: bool | None = None,
) -> tuple[NDArray[np.float64], float, int, bool, float, int]:
    """Low-level fit on 0-based positions of a float array.

    Returns ``(theta, loglik, iterations, converged, grad_norm, n_starts)``.
    The deterministic starts are run when ``init`` is None or when
    ``multistart`` is true; ``init`` then goes first.  The best
    quasi-likelihood wins (ties go to the earlier start).
    """
    nobs = hi - lo + 1
    if nobs < spec.d + 1:
        raise FitError(f"window of length {nobs} is too short for {spec.d} parameters")
    space = opts.space
    code = presample_code(opts.presample)
    if multistart is None:
        multistart = init is None
    starts = [] if init is None else [np.asarray(init, dtype=float)]
    if multistart:
        starts += starting_points(y[lo:hi + 1], spec, space)
    best = None
    for x0 in starts:
        res = kernels.fit_window(
            y, t0, lo, hi, spec.p, spec.q, code, x0,
            space.c_min, space.a0_max, space.cap, opts.tol_grad, opts.max_iter,
        )
        if best is None or res[1] > best[1]:
            best = res
    x, ll, iters, conv, pgn = best
    return x, float(ll), int(iters), bool(conv), float(pgn), len(starts)


def fit(
    series: CountSeries,
    spec: ModelSpec,
    window: Window | None = None,
    trunc_at: int | str | None = None,
    init: IngarchParams | ArrayLike | None = None,
    opts: FitOptions = DEFAULT_OPTIONS,
) -> FitResult:
    """Poisson QMLE on ``window`` (default: the whole series).

    ``trunc_at`` is a time index (default: the series start) or the string
    ``"window"`` for truncation at the window start.
    """
    if window is None:
        window = Window(series.start_index, series.end_index)
    t0, lo, hi = _resolve(series, window, trunc_at)
    y = series.as_float()
    x0 = None
    if init is not None:
        x0 = _as_params(init, spec).vector
    x, ll, iters, conv, pgn, n_starts = fit_vector(y, t0, lo, hi, spec, x0, opts)
    if not conv:
        logger.warning("fit on window [%d, %d] did not converge (grad norm %.3g after %d iterations)",
                       window.lo, window.hi, pgn, iters)
    return _finish(y, t0, lo, hi, spec, x, ll, iters, conv, pgn, n_starts, window,
                   series.start_index + t0, opts)


def _finish(y, t0, lo, hi, spec, x, ll, iters, conv, pgn, n_starts, window, trunc_label, opts):
    _, _, jsum, isum, _ = kernels.window_stats(
        y, t0, lo, hi, x, spec.p, spec.q, presample_code(opts.presample), False
    )
    n = hi - lo + 1
    J = jsum / n
    I = isum / n
    sigma, singular = sandwich_matrix(J, I, opts.pinv_rcond)
    return FitResult(
        theta_hat=IngarchParams.from_vector(x, spec),
        loglik=ll,
        J_hat=J,
        I_hat=I,
        Sigma_hat=sigma,
        converged=conv,
        iterations=iters,
        grad_norm=pgn,
        window=window,
        trunc_at=trunc_label,
        I_singular=singular,
        starts=n_starts,
        spec=spec,
    )


def sandwich_cov(fit_result: FitResult) -> NDArray[np.float64]:
    """Asymptotic covariance ``J^{-1} I J^{-1}`` (the inverse of ``Sigma``)."""
    j_inv = np.linalg.inv(fit_result.J_hat)
    cov = j_inv @ fit_result.I_hat @ j_inv
    return 0.5 * (cov + cov.T)


def sandwich_se(fit_result: FitResult, n: int | None = None) -> NDArray[np.float64]:
    """Robust standard errors ``sqrt(diag(Sigma^{-1}) / n)``.

    Raises :class:`numpy.linalg.LinAlgError` when the sandwich matrix is
    singular.
    """
    if n is None:
        n = fit_result.nobs
    if fit_result.I_singular or np.linalg.matrix_rank(fit_result.J_hat) < fit_result.J_hat.shape[0]:
        raise np.linalg.LinAlgError("sandwich matrix is singular")
    return np.sqrt(np.diag(sandwich_cov(fit_result)) / n)
