"""Monte-Carlo quantiles of the limit laws behind both tests.

Two functionals of a d-dimensional Brownian motion ``W`` are supported:

* ``BridgeSupSq``: ``sup_{0<t<1} ||W(t) - t W(1)||^2 / q(t)^2``, the null
  limit of the retrospective scan statistic.
* ``UdT``: ``sup_{1<t<=T} sup_{1<s<t} ||W(s) - s W(1)|| / t``, the null
  limit of the closed-end monitoring detector with a constant boundary.

Paths are simulated on a grid in fixed-size blocks.  Each block draws from
its own generator spawned from the request seed, so the result does not
depend on how blocks are scheduled.

Results are cached in a small text file keyed by a hash of the request.
The file starts with the header line ``countbreak-critval-cache v1``
followed by fixed-width records::

    <sha256 key, 64 hex> <value, float.hex, 24 wide> <std error, 24 wide> <crc32, 8 hex>

Records whose checksum does not match are ignored and rewritten on the
next store.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.optimize import brentq

from .weights import CONSTANT, WeightSpec

CACHE_ENV = "COUNTBREAK_CACHE_DIR"
CACHE_FILENAME = ".countbreak_critvals"
_CACHE_HEADER = "countbreak-critval-cache v1"
_RECORD_WIDTH = 64 + 1 + 24 + 1 + 24 + 1 + 8
_BLOCK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class BridgeSupSq:
    weight: WeightSpec = CONSTANT


@dataclass(frozen=True)
class UdT:
    horizon: float = 1.5

    def __post_init__(self) -> None:
        if not self.horizon > 1.0 or not math.isfinite(self.horizon):
            raise ValueError(f"closed-end horizon must be finite and > 1, got {self.horizon}")


Functional = Union[BridgeSupSq, UdT]


@dataclass(frozen=True)
class CritvalRequest:
    """One quantile computation.

    ``grid`` is the number of grid points on [0, 1] for the bridge and per
    unit of time for ``UdT``; ``paths`` is the number of replications.
    """

    d: int
    alpha: float = 0.05
    functional: Functional = field(default_factory=BridgeSupSq)
    grid: int = 10_000
    paths: int = 100_000
    seed: int = 20200729

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.grid < 2 or self.paths < 1:
            raise ValueError("need grid >= 2 and paths >= 1")

    def describe(self) -> dict:
        f = self.functional
        if isinstance(f, BridgeSupSq):
            fdesc = {"name": "bridge_sup_sq", "weight": f.weight.label()}
        else:
            fdesc = {"name": "u_dT", "T": repr(float(f.horizon))}
        return {
            "version": 1,
            "functional": fdesc,
            "d": self.d,
            "alpha": repr(float(self.alpha)),
            "grid": self.grid,
            "paths": self.paths,
            "seed": self.seed,
        }

    def key(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class CritvalResult:
    value: float
    std_error: float
    request: CritvalRequest
    cached: bool = False

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "cached": self.cached,
            "cache_key": self.request.key(),
            "request": self.request.describe(),
        }


# ---------------------------------------------------------------------------
# simulation


def _bridge_block(rng: np.random.Generator, b: int, n: int, d: int, q2: np.ndarray) -> np.ndarray:
    w = np.cumsum(rng.standard_normal((b, n, d)), axis=1)
    w *= 1.0 / math.sqrt(n)
    t = np.arange(1, n + 1) / n
    bridge = w[:, :-1, :] - t[:-1, None] * w[:, -1:, :]
    return (np.einsum("bnd,bnd->bn", bridge, bridge) / q2).max(axis=1)


def _udt_block(rng: np.random.Generator, b: int, n: int, d: int, horizon: float) -> np.ndarray:
    steps = int(math.floor((horizon - 1.0) * n + 1e-9))
    w1 = rng.standard_normal((b, d))
    if steps < 2:
        return np.zeros(b)
    incr = np.cumsum(rng.standard_normal((b, steps, d)), axis=1)
    incr *= 1.0 / math.sqrt(n)
    u = np.arange(1, steps + 1) / n
    # W(1 + u) - (1 + u) W(1) = [W(1 + u) - W(1)] - u W(1)
    dev = incr - u[None, :, None] * w1[:, None, :]
    norm = np.sqrt(np.einsum("bnd,bnd->bn", dev, dev))
    running = np.maximum.accumulate(norm, axis=1)
    t = 1.0 + np.arange(2, steps + 1) / n
    return (running[:, :-1] / t).max(axis=1)


def simulate_functional(req: CritvalRequest, workers: int = 1) -> np.ndarray:
    """Draw ``req.paths`` replications of the requested functional (sorted)."""
    f = req.functional
    n = req.grid
    if isinstance(f, BridgeSupSq):
        per_path = n * req.d
        t = np.arange(1, n) / n
        q2 = f.weight.values(t) ** 2
    else:
        per_path = max(1, int((f.horizon - 1.0) * n)) * req.d
    block = max(1, _BLOCK_ELEMENTS // per_path)
    sizes = [block] * (req.paths // block)
    if req.paths % block:
        sizes.append(req.paths % block)
    seeds = np.random.SeedSequence(req.seed).spawn(len(sizes))

    def run(i: int) -> np.ndarray:
        rng = np.random.default_rng(seeds[i])
        if isinstance(f, BridgeSupSq):
            return _bridge_block(rng, sizes[i], n, req.d, q2)
        return _udt_block(rng, sizes[i], n, req.d, f.horizon)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    return np.sort(np.concatenate(parts))


def empirical_quantile(sorted_draws: np.ndarray, alpha: float) -> tuple[float, float]:
    """Upper ``alpha`` quantile and a distribution-free standard error.

    The error is half the distance between the order statistics one
    binomial standard deviation either side of the quantile rank.
    """
    r = sorted_draws.size
    value = float(np.quantile(sorted_draws, 1.0 - alpha))
    rank = r * (1.0 - alpha)
    spread = math.sqrt(r * alpha * (1.0 - alpha))
    lo = min(max(int(math.floor(rank - spread)), 0), r - 1)
    hi = min(max(int(math.ceil(rank + spread)), 0), r - 1)
    return value, 0.5 * float(sorted_draws[hi] - sorted_draws[lo])


# ---------------------------------------------------------------------------
# cache


def cache_path(directory: str | Path | None = None) -> Path:
    if directory is None:
        directory = os.environ.get(CACHE_ENV) or os.getcwd()
    return Path(directory) / CACHE_FILENAME


def _crc(key: str, value: str, se: str) -> str:
    return f"{zlib.crc32(f'{key} {value} {se}'.encode()) & 0xFFFFFFFF:08x}"


def _read_cache(path: Path) -> dict[str, tuple[float, float]]:
    try:
        lines = path.read_text().splitlines()
    except (FileNotFoundError, UnicodeDecodeError):
        return {}
    if not lines or lines[0].strip() != _CACHE_HEADER:
        return {}
    entries: dict[str, tuple[float, float]] = {}
    for line in lines[1:]:
        if len(line) != _RECORD_WIDTH:
            continue
        key, value, se, crc = line[:64], line[65:89], line[90:114], line[115:]
        if _crc(key, value, se) != crc:
            continue
        try:
            entries[key] = (float.fromhex(value.strip()), float.fromhex(se.strip()))
        except ValueError:
            continue
    return entries


def _write_cache(path: Path, entries: dict[str, tuple[float, float]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [_CACHE_HEADER]
    for key in sorted(entries):
        value, se = entries[key]
        v, s = value.hex().rjust(24), se.hex().rjust(24)
        rows.append(f"{key} {v} {s} {_crc(key, v, s)}")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".critvals-")
    with os.fdopen(fd, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    os.replace(tmp, path)


def cache_lookup(req: CritvalRequest, directory: str | Path | None = None) -> CritvalResult | None:
    """Stored result for ``req`` or ``None`` on a miss (or a corrupt record)."""
    hit = _read_cache(cache_path(directory)).get(req.key())
    if hit is None:
        return None
    return CritvalResult(hit[0], hit[1], req, cached=True)


def cache_store(result: CritvalResult, directory: str | Path | None = None) -> None:
    path = cache_path(directory)
    entries = _read_cache(path)
    entries[result.request.key()] = (result.value, result.std_error)
    _write_cache(path, entries)


def cache_clear(directory: str | Path | None = None) -> None:
    cache_path(directory).unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# public entry points


def compute(
    req: CritvalRequest,
    *,
    use_cache: bool = True,
    cache_dir: str | Path | None = None,
    workers: int = 1,
) -> CritvalResult:
    """Quantile for ``req``, served from the cache when possible."""
    if use_cache:
        hit = cache_lookup(req, cache_dir)
        if hit is not None:
            return hit
    value, se = empirical_quantile(simulate_functional(req, workers), req.alpha)
    result = CritvalResult(value, se, req)
    if use_cache:
        cache_store(result, cache_dir)
    return result


def bridge_sup_quantile(req: CritvalRequest, **kwargs) -> float:
    """(1 - alpha)-quantile of ``sup ||W_d(t)||^2 / q(t)^2`` over a bridge."""
    if not isinstance(req.functional, BridgeSupSq):
        raise ValueError("request is not for the bridge functional")
    return compute(req, **kwargs).value


def u_dT_quantile(req: CritvalRequest, **kwargs) -> float:
    """(1 - alpha)-quantile of the closed-end monitoring functional."""
    if not isinstance(req.functional, UdT):
        raise ValueError("request is not for the U_{d,T} functional")
    return compute(req, **kwargs).value


def kolmogorov_tail(x: float, terms: int = 100) -> float:
    """``P(sup_t |B(t)| > x)`` for a one-dimensional Brownian bridge."""
    k = np.arange(1, terms + 1)
    return float(2.0 * np.sum((-1.0) ** (k + 1) * np.exp(-2.0 * k**2 * x * x)))


def bridge_sup_sq_quantile_1d(alpha: float) -> float:
    """Exact upper ``alpha`` quantile of ``sup B(t)^2`` in dimension one."""
    x = brentq(lambda v: kolmogorov_tail(v) - alpha, 0.2, 10.0, xtol=1e-14)
    return x * x
