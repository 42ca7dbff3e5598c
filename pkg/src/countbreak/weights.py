"""Weight functions for the retrospective scan statistic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightSpec:
    """``q(tau) = 1`` ("constant") or ``q(tau) = (tau (1 - tau))^gamma`` ("power").

    The power family is restricted to ``0 <= gamma < 1/2``.
    """

    kind: str = "constant"
    gamma: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "power"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "power" and not 0.0 <= self.gamma < 0.5:
            raise ValueError(f"power weight needs 0 <= gamma < 1/2, got {self.gamma}")

    @classmethod
    def parse(cls, text: str) -> WeightSpec:
        """``"constant"`` / ``"1"`` or ``"power:<gamma>"``."""
        text = text.strip().lower()
        if text in ("constant", "const", "1"):
            return cls()
        kind, _, arg = text.partition(":")
        if kind == "power" and arg:
            return cls("power", float(arg))
        raise ValueError(f"weight must be 'constant' or 'power:<gamma>', got {text!r}")

    def label(self) -> str:
        return "constant" if self.kind == "constant" else f"power:{self.gamma!r}"

    def values(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if self.kind == "constant":
            return np.ones_like(tau)
        return (tau * (1.0 - tau)) ** self.gamma


CONSTANT = WeightSpec()


def weight_q(tau: float, spec: WeightSpec = CONSTANT) -> float:
    """Evaluate the weight at ``tau`` in the open unit interval."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return float(spec.values(np.asarray(tau)))
