"""Bundled example data.

``transactions_synthetic`` is a SYNTHETIC series of 460 per-minute counts drawn
from a two-regime negative binomial INGARCH(1,1) model whose parameters
mimic published fits to stock-transaction counts: ``(8.35, 0.20, 0.11)``
for t <= 143 and ``(2.35, 0.12, 0.61)`` afterwards, dispersion r = 8.  It
is not real market data; it only serves as a reproducible stand-in for
smoke tests and examples.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .models import CountSeries, ModelSpec, format_csv, parse_csv, simulate_with_change

TRANSACTIONS_SYNTHETIC = "transactions_synthetic.csv"
TRANSACTIONS_BREAK = 143
TRANSACTIONS_THETA = ((8.35, 0.20, 0.11), (2.35, 0.12, 0.61))
TRANSACTIONS_R = 8.0
TRANSACTIONS_N = 460
TRANSACTIONS_SEED = 20020705

_HEADER = (
    "# SYNTHETIC data: two-regime NB-INGARCH(1,1), r=8, change after t=143,\n"
    "# theta=(8.35,0.20,0.11) then (2.35,0.12,0.61), seed 20020705.\n"
)


def generate_transactions_synthetic() -> CountSeries:
    """Draw the synthetic series from its generating model."""
    spec = ModelSpec(1, 1, TRANSACTIONS_R)
    return simulate_with_change(spec, TRANSACTIONS_THETA[0], TRANSACTIONS_THETA[1], TRANSACTIONS_BREAK,
                                TRANSACTIONS_N, seed=TRANSACTIONS_SEED)


def regenerate_transactions_synthetic(path: str | Path | None = None) -> Path:
    """Rewrite the bundled CSV (or write it to ``path``)."""
    target = Path(path) if path is not None else Path(__file__).parent / "data" / TRANSACTIONS_SYNTHETIC
    target.write_text(_HEADER + "t,count\n" + format_csv(generate_transactions_synthetic(), with_index=True))
    return target


def transactions_synthetic() -> CountSeries:
    """Load the bundled synthetic series."""
    text = resources.files("countbreak").joinpath("data", TRANSACTIONS_SYNTHETIC).read_text()
    body = "".join(line + "\n" for line in text.splitlines() if not line.startswith("#"))
    return parse_csv(body)
