"""Change-point detection for INGARCH count time series.

Estimation uses the Poisson quasi-maximum likelihood estimator; the
package provides a retrospective (off-line) test, closed-end sequential
monitoring and Monte-Carlo critical values for both.
"""

from __future__ import annotations

__version__ = "0.1.0"

from ._backend import BACKEND
from .critvals import BridgeSupSq, CritvalRequest, CritvalResult, UdT
from .models import (
    CountSeries,
    IngarchParams,
    ModelSpec,
    ParamSpace,
    read_csv,
    simulate,
    simulate_with_change,
    write_csv,
)
from .pqmle import FitOptions, FitResult, Window, fit, sandwich_se
from .retrospective import RetroConfig, RetroReport, scan
from .sequential import MonitorConfig, MonitorState, calibrate, run_closed_end, step
from .weights import WeightSpec

__all__ = [
    "BACKEND",
    "BridgeSupSq",
    "CountSeries",
    "CritvalRequest",
    "CritvalResult",
    "FitOptions",
    "FitResult",
    "IngarchParams",
    "ModelSpec",
    "MonitorConfig",
    "MonitorState",
    "ParamSpace",
    "RetroConfig",
    "RetroReport",
    "UdT",
    "Window",
    "WeightSpec",
    "calibrate",
    "fit",
    "read_csv",
    "run_closed_end",
    "sandwich_se",
    "scan",
    "simulate",
    "simulate_with_change",
    "step",
    "write_csv",
]
