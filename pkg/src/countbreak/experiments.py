"""Monte-Carlo replication of the level/power and detection-delay tables.

Three layouts are supported:

* table 1: retrospective test, level under ``theta0`` and power with a
  change to ``theta1`` at ``n / 2``;
* table 2: closed-end monitor, level and power with a change at
  ``floor(1.25 m)``;
* table 3: detection-delay statistics of the monitor under the table-2
  alternative.

Every replication draws from its own seed derived from the design seed,
the table, the sample size and the hypothesis, so cells can be computed
in any order or in parallel with identical results.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .models import ModelSpec, simulate, simulate_with_change
from .pqmle import FitError
from .retrospective import RetroConfig, scan
from .sequential import CalibrationError, MonitorConfig, horizon, run_closed_end

__all__ = [
    "Cell",
    "DelayCell",
    "ExperimentDesign",
    "monitor_replication",
    "replicate",
    "retro_replication",
]

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "countbreak.replicate/1"
FAILURE_FLAG = 0.10


@dataclass(frozen=True)
class ExperimentDesign:
    """One row of a replication table.

    ``theta1`` is required for power and delay cells; ``sizes`` lists the
    sample sizes ``n`` (table 1) or historical lengths ``m`` (tables 2, 3).
    """

    table: int
    spec: ModelSpec
    theta0: tuple[float, ...]
    theta1: tuple[float, ...] | None = None
    sizes: tuple[int, ...] = (500, 1000)
    reps: int = 200
    seed: int = 20200729
    burnin: int = 500

    def __post_init__(self) -> None:
        if self.table not in (1, 2, 3):
            raise ValueError(f"table must be 1, 2 or 3, got {self.table}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.table == 3 and self.theta1 is None:
            raise ValueError("delay tables need an alternative theta1")
        for n in self.sizes:
            if n < 10:
                raise ValueError(f"sample size {n} is too small")

    def change_point(self, size: int) -> int:
        """Last time point of the first regime."""
        if self.table == 1:
            return size // 2
        return int(math.floor(1.25 * size))

    def seeds(self, size: int, hypothesis: str) -> list[np.random.SeedSequence]:
        key = (self.table, size, 0 if hypothesis == "H0" else 1)
        return np.random.SeedSequence(self.seed, spawn_key=key).spawn(self.reps)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["spec"] = str(self.spec)
        out["r"] = self.spec.r
        return out


@dataclass
class Cell:
    """Rejection (or alarm) frequency for one size and hypothesis."""

    size: int
    hypothesis: str
    rate: float
    std_error: float
    reps: int
    failures: int
    flagged: bool
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class DelayCell:
    """Detection-delay summary for one historical length ``m``."""

    size: int
    change_point: int
    reps: int
    alarms: int
    mean: float
    std: float
    std_error: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    failures: int
    flagged: bool


def retro_replication(design: ExperimentDesign, n: int, hypothesis: str, seed,
                      config: RetroConfig) -> dict[str, Any]:
    spec = design.spec
    if hypothesis == "H0":
        series = simulate(spec, design.theta0, n, burnin=design.burnin, seed=seed)
    else:
        series = simulate_with_change(spec, design.theta0, design.theta1,
                                      design.change_point(n), n, burnin=design.burnin, seed=seed)
    try:
        rep = scan(series, spec, config)
    except (FitError, ValueError, np.linalg.LinAlgError) as exc:
        return {"ok": False, "error": str(exc)}
    failed = bool(rep.nonconverged) or not all(
        rep.sigma_flags.get(k, True) for k in ("left_converged", "right_converged"))
    return {"ok": True, "event": rep.reject, "statistic": rep.statistic,
            "argmax": rep.argmax, "fit_failure": failed}


def monitor_replication(design: ExperimentDesign, m: int, hypothesis: str, seed,
                        config: MonitorConfig) -> dict[str, Any]:
    spec = design.spec
    hz = horizon(m, config.T_horizon)
    kstar = design.change_point(m)
    if hypothesis == "H0" or kstar >= hz:
        series = simulate(spec, design.theta0, hz, burnin=design.burnin, seed=seed)
    else:
        series = simulate_with_change(spec, design.theta0, design.theta1, kstar, hz,
                                      burnin=design.burnin, seed=seed)
    values = series.values
    try:
        run = run_closed_end(values[:m], values[m:], spec, config,
                             change_point=None if hypothesis == "H0" else kstar)
    except (CalibrationError, FitError, np.linalg.LinAlgError) as exc:
        return {"ok": False, "error": str(exc)}
    return {"ok": True, "event": run.alarm, "stopped_at": run.state.stopped_at,
            "delay": run.delay, "true_alarm": run.true_alarm,
            "fit_failure": bool(run.state.failed)}


def _run_one(args):
    kind, design, size, hypothesis, seed, config = args
    if kind == "retro":
        return retro_replication(design, size, hypothesis, seed, config)
    return monitor_replication(design, size, hypothesis, seed, config)


def _map(tasks, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [_run_one(t) for t in tasks]


def _rate_cell(size, hypothesis, results) -> Cell:
    ok = [r for r in results if r["ok"]]
    failures = sum(1 for r in results if not r["ok"] or r.get("fit_failure"))
    n_ok = len(ok)
    rate = sum(bool(r["event"]) for r in ok) / n_ok if n_ok else float("nan")
    se = math.sqrt(rate * (1 - rate) / n_ok) if n_ok else float("nan")
    extra: dict[str, Any] = {"errors": len(results) - n_ok}
    true_alarms = [r.get("true_alarm") for r in ok if r.get("true_alarm") is not None]
    if true_alarms:
        extra["true_alarm_rate"] = sum(true_alarms) / n_ok
    return Cell(size, hypothesis, rate, se, len(results), failures,
                failures > FAILURE_FLAG * len(results), extra)


def _delay_cell(size, kstar, results) -> DelayCell:
    ok = [r for r in results if r["ok"]]
    failures = sum(1 for r in results if not r["ok"] or r.get("fit_failure"))
    delays = np.array([r["delay"] for r in ok if r.get("true_alarm")], dtype=float)
    if delays.size:
        q = np.quantile(delays, [0.25, 0.5, 0.75])
        sd = float(delays.std(ddof=1)) if delays.size > 1 else 0.0
        stats = (float(delays.mean()), sd, sd / math.sqrt(delays.size),
                 float(delays.min()), *map(float, q), float(delays.max()))
    else:
        stats = (float("nan"),) * 8
    return DelayCell(size, kstar, len(results), int(delays.size), *stats,
                     failures=failures, flagged=failures > FAILURE_FLAG * len(results))


def replicate(
    design: ExperimentDesign,
    retro_config: RetroConfig | None = None,
    monitor_config: MonitorConfig | None = None,
    workers: int = 1,
) -> dict[str, Any]:
    """Run every cell of ``design`` and return a table-shaped report."""
    cells: list[dict[str, Any]] = []
    if design.table == 1:
        kind, config = "retro", retro_config or RetroConfig()
    else:
        kind, config = "monitor", monitor_config or MonitorConfig()
    hyps: Sequence[str]
    if design.table == 3:
        hyps = ("H1",)
    else:
        hyps = ("H0", "H1") if design.theta1 is not None else ("H0",)
    for size in design.sizes:
        for hyp in hyps:
            tasks = [(kind, design, size, hyp, s, config) for s in design.seeds(size, hyp)]
            results = _map(tasks, workers)
            if design.table == 3:
                cells.append(asdict(_delay_cell(size, design.change_point(size), results)))
            else:
                cells.append(asdict(_rate_cell(size, hyp, results)))
            logger.info("table %d, size %d, %s done", design.table, size, hyp)
    return {"schema": REPORT_SCHEMA, "design": design.to_dict(),
            "config": _config_dict(config), "cells": cells}


def _config_dict(config) -> dict[str, Any]:
    out = asdict(config)
    if hasattr(config, "weight"):
        out["weight"] = config.weight.label()
    if "boundary" in out and callable(out["boundary"]):
        out["boundary"] = repr(out["boundary"])
    return out
