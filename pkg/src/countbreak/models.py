"""Linear INGARCH(p, q) conditional-mean models for count series.

The conditional mean follows

    lambda_t = alpha0 + sum_i alpha_i Y_{t-i} + sum_j beta_j lambda_{t-j}

and observations are drawn Poisson(lambda_t) or negative binomial with mean
lambda_t and success probability r / (r + lambda_t).

Truncated paths set every observation before the truncation point to zero.
Before that point the mean is held at the value the recursion converges to
under an all-zero past, ``alpha0 / (1 - sum(beta))`` ("fixed-point"), or at
zero ("zero", which makes the first truncated mean equal to ``alpha0``).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Literal, Sequence

import numpy as np

from ._backend import kernels

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

Presample = Literal["fixed-point", "zero"]
_PRESAMPLE_CODES = {"fixed-point": 0, "zero": 1}


class ParameterError(ValueError):
    """Parameter vector outside the admissible region."""


class SeriesError(ValueError):
    """Invalid count series or series file."""


def presample_code(presample: str) -> int:
    try:
        return _PRESAMPLE_CODES[presample]
    except KeyError:
        raise ValueError(
            f"presample must be one of {sorted(_PRESAMPLE_CODES)}, got {presample!r}"
        ) from None


@dataclass(frozen=True)
class CountSeries:
    """Ordered non-negative integer observations.

    Parameters
    ----------
    values : array_like of int
        Counts per time step.
    start_index : int
        Time label of the first value.
    """

    values: NDArray[np.int64]
    start_index: int = 1

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if arr.ndim != 1 or arr.size < 1:
            raise SeriesError("a count series needs at least one observation")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
                raise SeriesError("counts must be integers")
        elif arr.dtype.kind not in "iu":
            raise SeriesError(f"counts must be integers, got dtype {arr.dtype}")
        if np.any(arr < 0):
            raise SeriesError("counts must be non-negative")
        arr = arr.astype(np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "start_index", int(self.start_index))

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def end_index(self) -> int:
        return self.start_index + len(self) - 1

    def position(self, t: int) -> int:
        """0-based offset of time label ``t``."""
        pos = int(t) - self.start_index
        if not 0 <= pos < len(self):
            raise IndexError(f"time index {t} outside [{self.start_index}, {self.end_index}]")
        return pos

    def as_float(self) -> NDArray[np.float64]:
        return self.values.astype(np.float64)

    def head(self, n: int) -> CountSeries:
        return CountSeries(self.values[:n], self.start_index)

    def extend(self, more: Iterable[int]) -> CountSeries:
        return CountSeries(np.concatenate([self.values, np.asarray(list(more), dtype=np.int64)]),
                           self.start_index)


@dataclass(frozen=True)
class ModelSpec:
    """Model orders and innovation law.

    ``r=None`` means Poisson innovations; otherwise negative binomial with
    dispersion ``r``.  The innovation law matters only for simulation; the
    estimators are Poisson quasi-likelihood estimators either way.
    """

    p: int = 1
    q: int = 1
    r: float | None = None

    def __post_init__(self) -> None:
        if self.p < 0 or self.q < 0 or self.p + self.q < 1:
            raise ValueError(f"need p, q >= 0 and p + q >= 1, got p={self.p}, q={self.q}")
        if self.r is not None and not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError(f"negative binomial dispersion must be positive, got r={self.r}")

    @property
    def d(self) -> int:
        return 1 + self.p + self.q

    @property
    def innovation(self) -> str:
        return "poisson" if self.r is None else "negbin"

    def with_r(self, r: float | None) -> ModelSpec:
        return ModelSpec(self.p, self.q, r)

    @classmethod
    def parse(cls, text: str, r: float | None = None) -> ModelSpec:
        """Parse ``"ingarch:p,q"`` (``"ingarch:p"`` means q = 0)."""
        name, _, orders = text.partition(":")
        if name.strip().lower() != "ingarch" or not orders:
            raise ValueError(f"model must look like 'ingarch:p,q', got {text!r}")
        parts = [int(v) for v in orders.split(",")]
        if len(parts) == 1:
            parts.append(0)
        if len(parts) != 2:
            raise ValueError(f"model must look like 'ingarch:p,q', got {text!r}")
        return cls(parts[0], parts[1], r)

    def __str__(self) -> str:
        law = "Poisson" if self.r is None else f"NegBin(r={self.r:g})"
        return f"INGARCH({self.p},{self.q}) {law}"


@dataclass(frozen=True)
class ParamSpace:
    """Compact parameter region used for estimation.

    The region is ``alpha0 in [c_min, a0_max]``, every feedback coefficient
    non-negative, and ``sum(alphas) + sum(betas) <= 1 - eps_stat``.
    """

    c_min: float = 1e-4
    a0_max: float = 1e4
    eps_stat: float = 1e-3

    def __post_init__(self) -> None:
        if not (0 < self.c_min < self.a0_max):
            raise ValueError("need 0 < c_min < a0_max")
        if not (0 < self.eps_stat < 1):
            raise ValueError("eps_stat must lie in (0, 1)")

    @property
    def cap(self) -> float:
        return 1.0 - self.eps_stat

    def contains(self, vec: ArrayLike, tol: float = 1e-12) -> bool:
        v = np.asarray(vec, dtype=float)
        return bool(
            np.all(np.isfinite(v))
            and self.c_min - tol <= v[0] <= self.a0_max + tol
            and np.all(v[1:] >= -tol)
            and v[1:].sum() <= self.cap + tol
        )


DEFAULT_SPACE = ParamSpace()


@dataclass(frozen=True)
class IngarchParams:
    """Parameter vector ``(alpha0, alpha_1..alpha_p, beta_1..beta_q)``."""

    alpha0: float
    alphas: tuple[float, ...] = ()
    betas: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha0", float(self.alpha0))
        object.__setattr__(self, "alphas", tuple(float(v) for v in self.alphas))
        object.__setattr__(self, "betas", tuple(float(v) for v in self.betas))

    @property
    def p(self) -> int:
        return len(self.alphas)

    @property
    def q(self) -> int:
        return len(self.betas)

    @property
    def vector(self) -> NDArray[np.float64]:
        return np.array((self.alpha0, *self.alphas, *self.betas), dtype=float)

    @property
    def persistence(self) -> float:
        return sum(self.alphas) + sum(self.betas)

    @classmethod
    def from_vector(cls, vec: ArrayLike, spec: ModelSpec) -> IngarchParams:
        v = np.asarray(vec, dtype=float).ravel()
        if v.size != spec.d:
            raise ParameterError(f"expected {spec.d} parameters for {spec}, got {v.size}")
        return cls(v[0], tuple(v[1:1 + spec.p]), tuple(v[1 + spec.p:]))

    @classmethod
    def parse(cls, text: str, spec: ModelSpec) -> IngarchParams:
        return cls.from_vector([float(s) for s in text.split(",")], spec)

    def check(self, spec: ModelSpec, space: ParamSpace = DEFAULT_SPACE) -> None:
        """Raise :class:`ParameterError` unless the parameter lies in the region."""
        if self.p != spec.p or self.q != spec.q:
            raise ParameterError(
                f"parameter has orders ({self.p},{self.q}), model is ({spec.p},{spec.q})"
            )
        if not space.contains(self.vector):
            raise ParameterError(
                f"theta={tuple(self.vector.round(6))} outside the parameter space "
                f"(alpha0 in [{space.c_min:g}, {space.a0_max:g}], coefficients >= 0, "
                f"persistence <= {space.cap:g})"
            )

    def __str__(self) -> str:
        return "(" + ", ".join(f"{v:.6g}" for v in self.vector) + ")"


def _as_params(theta: IngarchParams | ArrayLike, spec: ModelSpec) -> IngarchParams:
    if isinstance(theta, IngarchParams):
        return theta
    return IngarchParams.from_vector(theta, spec)


def _paths(series, spec, theta, trunc_at, presample, order, space):
    theta = _as_params(theta, spec)
    theta.check(spec, space)
    t0 = series.position(trunc_at)
    return kernels.mean_paths(
        series.as_float(), t0, t0, len(series) - 1, theta.vector,
        spec.p, spec.q, presample_code(presample), order,
    )


def truncated_mean_path(
    series: CountSeries,
    spec: ModelSpec,
    theta: IngarchParams | ArrayLike,
    trunc_at: int | None = None,
    *,
    presample: Presample = "fixed-point",
    space: ParamSpace = DEFAULT_SPACE,
) -> NDArray[np.float64]:
    """Conditional means with the past before ``trunc_at`` set to zero.

    Returns one value per time index from ``trunc_at`` (default: the first
    index) to the end of the series.
    """
    if trunc_at is None:
        trunc_at = series.start_index
    lam, _, _ = _paths(series, spec, theta, trunc_at, presample, 0, space)
    return lam


def mean_gradient_path(
    series: CountSeries,
    spec: ModelSpec,
    theta: IngarchParams | ArrayLike,
    trunc_at: int | None = None,
    *,
    presample: Presample = "fixed-point",
    space: ParamSpace = DEFAULT_SPACE,
) -> NDArray[np.float64]:
    """Parameter gradients of :func:`truncated_mean_path`, shape ``(n, d)``."""
    if trunc_at is None:
        trunc_at = series.start_index
    _, grad, _ = _paths(series, spec, theta, trunc_at, presample, 1, space)
    return grad


def mean_hessian_path(
    series: CountSeries,
    spec: ModelSpec,
    theta: IngarchParams | ArrayLike,
    trunc_at: int | None = None,
    *,
    presample: Presample = "fixed-point",
    space: ParamSpace = DEFAULT_SPACE,
) -> NDArray[np.float64]:
    """Second parameter derivatives of the truncated means, shape ``(n, d, d)``."""
    if trunc_at is None:
        trunc_at = series.start_index
    _, _, hess = _paths(series, spec, theta, trunc_at, presample, 2, space)
    return hess


def stationary_mean(spec: ModelSpec, theta: IngarchParams | ArrayLike) -> float:
    """Unconditional mean ``alpha0 / (1 - sum(alpha) - sum(beta))``."""
    theta = _as_params(theta, spec)
    persistence = theta.persistence
    if not persistence < 1.0:
        raise ParameterError(f"non-stationary parameter: persistence {persistence:g} >= 1")
    return theta.alpha0 / (1.0 - persistence)


def _draw(rng: np.random.Generator, lam: float, r: float | None) -> int:
    if r is None:
        return int(rng.poisson(lam))
    return int(rng.negative_binomial(r, r / (r + lam)))


def _simulate(spec, regimes, n, burnin, seed, space):
    """Run the recursion; ``regimes`` is a list of (first position, params)."""
    for _, th in regimes:
        th.check(spec, space)
        if th.persistence >= 1.0:
            raise ParameterError("simulation needs a stationary parameter")
    rng = np.random.default_rng(seed)
    p, q = spec.p, spec.q
    total = burnin + n
    y = np.zeros(total, dtype=np.int64)
    lam = np.zeros(total)
    first = regimes[0][1]
    lam_pre = first.alpha0 / (1.0 - sum(first.betas))
    bounds = [burnin + start for start, _ in regimes[1:]] + [total]
    t = 0
    for (_, th), stop in zip(regimes, bounds):
        a0, al, be = th.alpha0, th.alphas, th.betas
        while t < stop:
            m = a0
            for i in range(p):
                if t - 1 - i >= 0:
                    m += al[i] * y[t - 1 - i]
            for j in range(q):
                m += be[j] * (lam[t - 1 - j] if t - 1 - j >= 0 else lam_pre)
            lam[t] = m
            y[t] = _draw(rng, m, spec.r)
            t += 1
    return CountSeries(y[burnin:]), lam[burnin:].copy()


def simulate(
    spec: ModelSpec,
    theta: IngarchParams | ArrayLike,
    n: int,
    burnin: int = 500,
    seed: int | np.random.SeedSequence | None = None,
    *,
    return_means: bool = False,
    space: ParamSpace = DEFAULT_SPACE,
) -> CountSeries | tuple[CountSeries, NDArray[np.float64]]:
    """Simulate ``n`` observations after discarding ``burnin`` steps.

    The recursion starts from ``lambda_1 = alpha0 / (1 - sum(beta))`` with a
    zero past.  With ``return_means=True`` the conditional means of the
    returned observations are returned as well.
    """
    if n < 1 or burnin < 0:
        raise ValueError("need n >= 1 and burnin >= 0")
    series, lam = _simulate(spec, [(0, _as_params(theta, spec))], n, burnin, seed, space)
    return (series, lam) if return_means else series


def simulate_with_change(
    spec: ModelSpec,
    theta0: IngarchParams | ArrayLike,
    theta1: IngarchParams | ArrayLike,
    change_at: int,
    n: int,
    burnin: int = 500,
    seed: int | np.random.SeedSequence | None = None,
    *,
    return_means: bool = False,
    space: ParamSpace = DEFAULT_SPACE,
) -> CountSeries | tuple[CountSeries, NDArray[np.float64]]:
    """Simulate with parameter ``theta0`` up to ``change_at`` and ``theta1`` after.

    Observations ``1..change_at`` follow the first regime; from
    ``change_at + 1`` on the same recursion continues with ``theta1``.
    """
    if not 1 <= change_at < n:
        raise ValueError(f"change point must satisfy 1 <= k* < n, got {change_at}")
    regimes = [(0, _as_params(theta0, spec)), (change_at, _as_params(theta1, spec))]
    series, lam = _simulate(spec, regimes, n, burnin, seed, space)
    return (series, lam) if return_means else series


# ---------------------------------------------------------------------------
# CSV


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_csv(text: str) -> CountSeries:
    """Parse ``<count>`` or ``<t>,<count>`` records, with an optional header."""
    rows = [row for row in csv.reader(io.StringIO(text)) if row and any(c.strip() for c in row)]
    if rows and not _is_number(rows[0][0].strip()):
        rows = rows[1:]
    if not rows:
        raise SeriesError("no observations found")
    width = len(rows[0])
    if width not in (1, 2):
        raise SeriesError(f"expected 1 or 2 columns, got {width}")
    counts: list[int] = []
    start = 1
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise SeriesError(f"record {lineno}: expected {width} fields, got {len(row)}")
        field_ = row[-1].strip()
        try:
            value = int(field_)
        except ValueError:
            raise SeriesError(f"record {lineno}: {field_!r} is not an integer count") from None
        if value < 0:
            raise SeriesError(f"record {lineno}: negative count {value}")
        counts.append(value)
        if width == 2 and lineno == 1:
            start = int(float(row[0]))
    return CountSeries(np.asarray(counts, dtype=np.int64), start)


def read_csv(path: str | Path) -> CountSeries:
    return parse_csv(Path(path).read_text())


def format_csv(series: CountSeries, with_index: bool = False) -> str:
    out = io.StringIO()
    for i, v in enumerate(series.values):
        if with_index:
            out.write(f"{series.start_index + i},{v}\n")
        else:
            out.write(f"{v}\n")
    return out.getvalue()


def write_csv(series: CountSeries, path: str | Path, with_index: bool = False) -> None:
    Path(path).write_text(format_csv(series, with_index))


def as_series(data: CountSeries | Sequence[int] | ArrayLike) -> CountSeries:
    return data if isinstance(data, CountSeries) else CountSeries(np.asarray(data))
