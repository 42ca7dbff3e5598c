"""Command-line interface: ``countbreak <subcommand> ...``.

Exit codes: 0 when no change is found (or the command has no decision),
1 when the retrospective test rejects or the monitor raises an alarm,
2 on errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Iterator, Sequence

import numpy as np

from . import __version__, critvals
from .experiments import ExperimentDesign, replicate
from .models import (
    CountSeries,
    IngarchParams,
    ModelSpec,
    format_csv,
    parse_csv,
    simulate,
    simulate_with_change,
)
from .pqmle import FitOptions, Window, fit, sandwich_se
from .retrospective import RetroConfig, scan
from .sequential import MonitorConfig, calibrate, step
from .weights import WeightSpec

logger = logging.getLogger("countbreak")

EXIT_OK, EXIT_CHANGE, EXIT_ERROR = 0, 1, 2
FIT_SCHEMA = "countbreak.fit/1"
CRITVAL_SCHEMA = "countbreak.critval/1"


class CliError(Exception):
    """User-facing error; reported without a traceback."""


# ---------------------------------------------------------------------------
# helpers


def _spec(args) -> ModelSpec:
    return ModelSpec.parse(args.model, getattr(args, "r", None))


def _theta(text: str, spec: ModelSpec) -> IngarchParams:
    params = IngarchParams.parse(text, spec)
    params.check(spec)
    return params


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _read_input(path: str) -> CountSeries:
    if path == "-":
        return parse_csv(sys.stdin.read())
    try:
        return parse_csv(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"no such file: {path}") from None


@contextmanager
def _output(path: str | None) -> Iterator[IO[str]]:
    if path is None or path == "-":
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w") as fh:
            yield fh


def _dump(obj, fh: IO[str]) -> None:
    fh.write(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return str(obj)


def _retro_config(args) -> RetroConfig:
    return RetroConfig(
        delta_u=args.delta_u,
        delta_v=args.delta_v,
        weight=WeightSpec.parse(args.weight),
        alpha=args.alpha,
        critical_value=args.critical_value,
        crit_grid=args.crit_grid,
        crit_paths=args.crit_paths,
        crit_seed=args.crit_seed,
        trunc=args.trunc or "series-start",
    )


def _monitor_config(args) -> MonitorConfig:
    return MonitorConfig(
        T_horizon=args.horizon,
        delta_vprime=args.delta_vprime,
        boundary=args.boundary,
        alpha=args.alpha,
        trunc=args.trunc or "window-start",
        crit_grid=args.crit_grid,
        crit_paths=args.crit_paths,
        crit_seed=args.crit_seed,
        max_windows=args.max_windows,
    )


def _parse_stream_line(line: str) -> int | None:
    text = line.strip()
    if not text or text.startswith("#"):
        return None
    field = text.split(",")[-1].strip()
    try:
        value = int(field)
    except ValueError:
        try:
            float(text.split(",")[0])
        except ValueError:
            return None  # header line
        raise CliError(f"not an integer count: {text!r}") from None
    if value < 0:
        raise CliError(f"negative count: {value}")
    return value


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    spec = _spec(args)
    seed = _seed(args)
    theta = _theta(args.theta, spec)
    if args.change_at is not None or args.theta2 is not None:
        if args.change_at is None or args.theta2 is None:
            raise CliError("--change-at and --theta2 must be given together")
        series = simulate_with_change(spec, theta, _theta(args.theta2, spec), args.change_at,
                                      args.n, burnin=args.burnin, seed=seed)
    else:
        series = simulate(spec, theta, args.n, burnin=args.burnin, seed=seed)
    with _output(args.out) as fh:
        if args.format == "json":
            _dump({"schema": "countbreak.series/1", "seed": seed, "model": str(spec),
                   "values": series.values.tolist()}, fh)
        else:
            fh.write(format_csv(series, with_index=args.with_index))
    return EXIT_OK


def cmd_fit(args) -> int:
    spec = _spec(args)
    series = _read_input(args.input)
    lo = args.start if args.start is not None else series.start_index
    hi = args.end if args.end is not None else series.end_index
    trunc = None if args.trunc in (None, "series-start") else "window"
    res = fit(series, spec, Window(lo, hi), trunc_at=trunc, opts=FitOptions())
    report = {"schema": FIT_SCHEMA, **res.to_dict()}
    try:
        report["sandwich_se"] = sandwich_se(res).tolist()
    except np.linalg.LinAlgError:
        report["sandwich_se"] = None
    report["config"] = {"model": str(spec), "window": [lo, hi], "trunc": args.trunc or "series-start"}
    with _output(args.out) as fh:
        _dump(report, fh)
    return EXIT_OK


def cmd_retro(args) -> int:
    spec = _spec(args)
    series = _read_input(args.input)
    report = scan(series, spec, _retro_config(args))
    with _output(args.out) as fh:
        if args.format == "csv":
            fh.write(report.to_csv())
        else:
            fh.write(report.to_json() + "\n")
    if args.profile:
        Path(args.profile).write_text(report.to_csv())
    return EXIT_CHANGE if report.reject else EXIT_OK


def cmd_monitor(args) -> int:
    spec = _spec(args)
    config = _monitor_config(args)
    if args.history is not None:
        history = _read_input(args.history)
        if args.m is not None and args.m != len(history):
            history = history.head(args.m)
        source = sys.stdin if args.input == "-" else open(args.input)
        prefix: list[int] = []
    else:
        if args.m is None:
            raise CliError("give either --history or --m")
        data = _read_input(args.input)
        if len(data) <= args.m:
            raise CliError(f"input has {len(data)} observations, need more than m={args.m}")
        history = data.head(args.m)
        prefix = data.values[args.m:].tolist()
        source = None
    state = calibrate(history, spec, config)
    with _output(args.out) as fh:

        def emit(obs: int) -> bool:
            nonlocal state
            state, decision = step(state, obs)
            line = {"k": state.k, "D_k": state.trace[-1], "threshold": state.threshold,
                    "ratio": state.ratios[-1], "alarm": decision == "alarm"}
            fh.write(json.dumps(line) + "\n")
            fh.flush()
            return state.finished

        done = state.finished
        for obs in prefix:
            if done:
                break
            done = emit(int(obs))
        if source is not None:
            try:
                for raw in source:
                    if done:
                        break
                    obs = _parse_stream_line(raw)
                    if obs is not None:
                        done = emit(obs)
            finally:
                if source is not sys.stdin:
                    source.close()
        final = state.to_dict()
        final["final"] = True
        final["alarm"] = state.stopped
        fh.write(json.dumps(final, default=_json_default) + "\n")
    if args.trace:
        Path(args.trace).write_text(state.trace_csv())
    return EXIT_CHANGE if state.stopped else EXIT_OK


def cmd_critval(args) -> int:
    if args.d is None:
        if args.model is None:
            raise CliError("give --d or --model")
        d = ModelSpec.parse(args.model).d
    else:
        d = args.d
    if args.functional == "bridge":
        functional: critvals.Functional = critvals.BridgeSupSq(WeightSpec.parse(args.weight))
    else:
        functional = critvals.UdT(args.horizon)
    req = critvals.CritvalRequest(d, args.alpha, functional, args.grid, args.paths, args.seed)
    res = critvals.compute(req, use_cache=not args.no_cache, workers=args.workers)
    with _output(args.out) as fh:
        _dump({"schema": CRITVAL_SCHEMA, **res.to_dict()}, fh)
    return EXIT_OK


def cmd_replicate(args) -> int:
    spec = _spec(args)
    seed = _seed(args)
    theta0 = tuple(_theta(args.theta, spec).vector.tolist())
    theta1 = tuple(_theta(args.theta2, spec).vector.tolist()) if args.theta2 else None
    sizes = tuple(int(s) for s in args.sizes.split(","))
    design = ExperimentDesign(args.table, spec, theta0, theta1, sizes, args.reps, seed)
    report = replicate(
        design,
        retro_config=_retro_config(args) if args.table == 1 else None,
        monitor_config=_monitor_config(args) if args.table != 1 else None,
        workers=args.workers,
    )
    report["seed"] = seed
    with _output(args.out) as fh:
        if args.format == "csv":
            cells = report["cells"]
            keys = [k for k in cells[0] if k != "extra"]
            fh.write(",".join(keys) + "\n")
            for c in cells:
                fh.write(",".join(repr(c[k]) if isinstance(c[k], float) else str(c[k])
                                  for k in keys) + "\n")
        else:
            _dump(report, fh)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_model(p: argparse.ArgumentParser, default: str = "ingarch:1,1") -> None:
    p.add_argument("--model", default=default, help="model orders, e.g. ingarch:1,1 (default %(default)s)")


def _add_crit(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.05, help="nominal level")
    p.add_argument("--crit-grid", type=int, default=10_000, help="grid size for the critical value")
    p.add_argument("--crit-paths", type=int, default=100_000, help="Monte-Carlo paths for the critical value")
    p.add_argument("--crit-seed", type=int, default=20200729, help="seed of the critical-value simulation")


def _add_retro(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weight", default="constant", help="constant or power:GAMMA")
    p.add_argument("--delta-u", type=float, default=2.5, help="u_n = floor(log(n)^delta_u)")
    p.add_argument("--delta-v", type=float, default=2.0, help="v_n = floor(log(n)^delta_v)")
    p.add_argument("--critical-value", type=float, help="use this critical value instead of simulating")


def _add_monitor(p: argparse.ArgumentParser) -> None:
    p.add_argument("--horizon", type=float, default=1.5, help="closed-end factor T")
    p.add_argument("--delta-vprime", type=float, default=2.0, help="v' = floor(log(m)^delta_vprime)")
    p.add_argument("--boundary", type=float, help="constant boundary c (default: simulated quantile)")
    p.add_argument("--max-windows", type=int, help="cap the windows per step (geometric grid)")


def _add_trunc(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trunc", choices=("series-start", "window-start"),
                   help="where the conditional mean recursion starts for sub-windows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countbreak",
        description="Change-point tests for INGARCH count time series.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a (piecewise) INGARCH series as CSV")
    _add_model(p)
    p.add_argument("--theta", required=True, help="alpha0,alpha_1..alpha_p,beta_1..beta_q")
    p.add_argument("--theta2", help="parameter after the change")
    p.add_argument("--change-at", type=int, help="last time point of the first regime")
    p.add_argument("--r", type=float, help="negative binomial dispersion (default Poisson)")
    p.add_argument("--n", type=int, required=True, help="number of observations")
    p.add_argument("--burnin", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--with-index", action="store_true", help="write t,count records")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="Poisson QMLE with sandwich standard errors")
    _add_model(p)
    p.add_argument("input", help="CSV file or - for standard input")
    p.add_argument("--start", type=int, help="first time label of the window")
    p.add_argument("--end", type=int, help="last time label of the window")
    _add_trunc(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("retro", help="retrospective change-point test")
    _add_model(p)
    p.add_argument("input", help="CSV file or - for standard input")
    _add_retro(p)
    _add_crit(p)
    _add_trunc(p)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--profile", help="also write the k,C_nk profile to this CSV file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_retro)

    p = sub.add_parser("monitor", help="closed-end sequential monitoring")
    _add_model(p)
    p.add_argument("input", nargs="?", default="-",
                   help="observations (file or -); with --m the first m records are the history")
    p.add_argument("--history", help="CSV with the historical sample")
    p.add_argument("--m", type=int, help="historical sample length")
    _add_monitor(p)
    _add_crit(p)
    _add_trunc(p)
    p.add_argument("--trace", help="write the k,D_k trace to this CSV file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("critval", help="Monte-Carlo critical value")
    p.add_argument("--d", type=int, help="parameter dimension")
    p.add_argument("--model", help="derive the dimension from a model, e.g. ingarch:1,1")
    p.add_argument("--functional", choices=("bridge", "udt"), default="bridge")
    p.add_argument("--weight", default="constant")
    p.add_argument("--horizon", type=float, default=1.5)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid", type=int, default=10_000)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=20200729)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_critval)

    p = sub.add_parser("replicate", help="Monte-Carlo level/power or delay tables")
    p.add_argument("--table", type=int, choices=(1, 2, 3), required=True)
    _add_model(p)
    p.add_argument("--theta", required=True)
    p.add_argument("--theta2")
    p.add_argument("--r", type=float)
    p.add_argument("--sizes", "--n", "--m", dest="sizes", default="500,1000",
                   help="comma-separated sample sizes n (table 1) or m (tables 2, 3)")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    _add_retro(p)
    _add_monitor(p)
    _add_crit(p)
    _add_trunc(p)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replicate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, LookupError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
