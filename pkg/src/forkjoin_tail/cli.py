"""Command-line front end: ``forkjoin-tail {constants,gamma-curve,validate,simulate}``.

Output goes to stdout (or ``--out``) as CSV or JSON; diagnostics go to
stderr. Exit codes: 0 success or all checks passed, 1 a validation check
failed, 2 usage error or invalid parameters.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import math
import sys
import warnings

import numpy as np

from . import validation
from .asymptotics import tail_estimate
from .model import (
    DomainError,
    ModelParams,
    classify,
    gamma_exponent,
    lambda_fraction,
    level_schedule,
    log_correction_exponent,
)
from .numerics import IntegrationError
from .simulator import (
    ISDegeneracyWarning,
    PathConfig,
    TiltConfig,
    estimate_tail_crude,
    estimate_tail_tilted,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# formatting


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def render(rows: list[dict], fmt: str, *, single: bool = False) -> str:
    if fmt == "json":
        data = [{k: _json_value(v) for k, v in r.items()} for r in rows]
        return json.dumps(data[0] if single and len(data) == 1 else data, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(rows[0].keys()))
    for r in rows:
        writer.writerow([_cell(v) for v in r.values()])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# argument parsing


def parse_grid(text: str) -> np.ndarray:
    """``LO:HI:STEP`` -> LO, LO+STEP, ..., up to HI (inclusive within rounding)."""
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"--a-grid must look like LO:HI:STEP, got {text!r}") from None
    if not (math.isfinite(lo) and math.isfinite(hi) and math.isfinite(step)):
        raise UsageError("--a-grid values must be finite")
    if lo <= 0:
        raise UsageError(f"--a-grid must start above 0 (gamma is defined for a > 0), got LO={lo!r}")
    if step <= 0 or hi < lo:
        raise UsageError(f"--a-grid needs STEP > 0 and HI >= LO, got {text!r}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    # strip the representation noise of lo + i*step so decimal grids stay decimal
    return np.array([float(f"{lo + i * step:.12g}") for i in range(count)])


def _params(args, n: int) -> ModelParams:
    return ModelParams(args.sigma, args.sigma_a, args.beta, n)


def _common(parser: argparse.ArgumentParser, default_n: list[int]) -> None:
    g = parser.add_argument_group("model")
    g.add_argument("--sigma", type=float, default=1.0, help="service volatility")
    g.add_argument("--sigma-a", type=float, default=1.0, help="arrival volatility")
    g.add_argument("--beta", type=float, default=1.0, help="capacity surplus (drift)")
    g.add_argument("--n-queues", type=int, nargs="+", default=default_n, metavar="N",
                   help="number of queues; several values give one row each")
    o = parser.add_argument_group("output")
    o.add_argument("--format", choices=("csv", "json"), default="csv")
    o.add_argument("--out", default=None, metavar="PATH", help="output file (default stdout)")


def _sim_opts(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=validation.DEFAULT_SEED, help="master seed (uint64)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forkjoin-tail", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("constants", help="lambda, a_star, regime, gamma, kappa, f_N, T_N, r_N")
    _common(c, [1000])
    c.add_argument("--a", type=float, required=True)
    c.add_argument("--k", type=float, default=0.0, help="time offset in T_N(a, k)")

    g = sub.add_parser("gamma-curve", help="CSV rows a,gamma,regime over an a-grid")
    _common(g, [1000])
    g.add_argument("--a-grid", required=True, metavar="LO:HI:STEP")

    v = sub.add_parser("validate", help="run a validation experiment")
    _common(v, [1000])
    v.add_argument("--which", required=True, choices=sorted(validation.CHECKS))
    v.add_argument("--reps", type=int, default=None, help="override the replication count")
    _sim_opts(v)

    s = sub.add_parser("simulate", help="Monte Carlo estimates of P(M_N > f_N(a))")
    _common(s, [16])
    grid = s.add_mutually_exclusive_group(required=True)
    grid.add_argument("--a", type=float, nargs="+")
    grid.add_argument("--a-grid", metavar="LO:HI:STEP")
    s.add_argument("--reps", type=int, default=10_000)
    s.add_argument("--horizon-mult", type=float, default=4.0)
    s.add_argument("--steps", type=int, default=4096)
    s.add_argument("--bridge", action="store_true", help="Brownian-bridge correction of grid maxima")
    s.add_argument("--estimator", choices=("crude", "tilted"), default=None,
                   help="default: tilted if a tilt is given, else crude")
    s.add_argument("--tilt-a", type=float, default=None, help="extra drift on the arrival process")
    s.add_argument("--tilt-i", type=float, default=None, help="extra drift on one service process")
    _sim_opts(s)
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_constants(args) -> list[dict]:
    rows = []
    for n in args.n_queues:
        params = _params(args, n)
        g = gamma_exponent(params, args.a)
        sched = level_schedule(params, args.a, args.k) if n >= 2 else None
        rows.append({
            "sigma": params.sigma, "sigma_a": params.sigma_a, "beta": params.beta, "N": n, "a": args.a,
            "lambda": lambda_fraction(params, args.a), "a_star": params.a_star,
            "regime": classify(params, args.a).value, "gamma": g,
            "kappa": log_correction_exponent(params, args.a),
            "f_N": sched.f_n if sched else math.nan, "T_N": sched.t_n if sched else math.nan,
            "r_N": sched.r_n if sched and sched.r_n is not None else math.nan,
        })
    return rows


def cmd_gamma_curve(args) -> list[dict]:
    params = _params(args, args.n_queues[0])
    return [{"a": float(a), "gamma": gamma_exponent(params, float(a)), "regime": classify(params, float(a)).value}
            for a in parse_grid(args.a_grid)]


def cmd_validate(args) -> tuple[list[dict], bool]:
    rep = validation.run(args.which, seed=args.seed, reps=args.reps, threads=args.threads)
    rows = [{"which": rep.which, "check": r.name, "observed": r.observed, "predicted": r.predicted,
             "tolerance": r.tolerance, "pass": r.passed, "detail": r.detail} for r in rep.results]
    for r in rep.results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: observed {r.observed:.6g}, "
              f"predicted {r.predicted:.6g}, tolerance {r.tolerance:.3g} {r.detail}".rstrip(), file=sys.stderr)
    return rows, rep.passed


def cmd_simulate(args) -> list[dict]:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    if not 0 <= args.seed < 2**64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    a_values = parse_grid(args.a_grid) if args.a_grid else np.asarray(args.a, dtype=float)
    cfg = PathConfig(args.horizon_mult, args.steps, args.bridge)
    tilted = args.estimator == "tilted" or (args.estimator is None and
                                             (args.tilt_a is not None or args.tilt_i is not None))
    if args.estimator == "crude" and (args.tilt_a is not None or args.tilt_i is not None):
        raise UsageError("--tilt-a/--tilt-i need the tilted estimator")
    # validate everything before the first replication runs
    plan = []
    for n in args.n_queues:
        params = _params(args, n)
        if n < 2:
            raise UsageError("simulate needs --n-queues >= 2 (the level f_N(a) vanishes at N = 1)")
        for a in a_values:
            a = float(a)
            gamma_exponent(params, a)
            plan.append((params, a))
    rows = []
    for params, a in plan:
        if tilted:
            tilt = None
            if args.tilt_a is not None or args.tilt_i is not None:
                tilt = TiltConfig(theta_a=args.tilt_a or 0.0, theta_i=args.tilt_i or 0.0)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ISDegeneracyWarning)
                est = estimate_tail_tilted(params, a, cfg, tilt, args.reps, args.seed, threads=args.threads)
            for w in caught:
                print(f"warning: N={params.n_queues} a={a:g}: {w.message}", file=sys.stderr)
        else:
            est = estimate_tail_crude(params, a, cfg, args.reps, args.seed, threads=args.threads)
        if params.n_queues >= 3:
            theory = tail_estimate(params, a)
            lo, hi = theory.estimate_low, theory.estimate_high
        else:
            lo = hi = math.nan
        rows.append({"N": params.n_queues, "a": a, "regime": classify(params, a).value, "p_hat": est.p_hat,
                     "stderr": est.stderr, "reps": est.reps, "kind": est.kind.value,
                     "theory_low": lo, "theory_high": hi})
    return rows


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage errors, 0 for --help
        return int(exc.code or 0)
    try:
        if args.command == "constants":
            rows, ok = cmd_constants(args), True
            text = render(rows, args.format, single=True)
        elif args.command == "gamma-curve":
            rows, ok = cmd_gamma_curve(args), True
            text = render(rows, args.format)
        elif args.command == "validate":
            rows, ok = cmd_validate(args)
            text = render(rows, args.format)
        else:
            rows, ok = cmd_simulate(args), True
            text = render(rows, args.format)
    except (UsageError, DomainError) as exc:
        print(f"forkjoin-tail {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrationError as exc:
        print(f"forkjoin-tail {args.command}: quadrature failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    with contextlib.suppress(BrokenPipeError):
        _emit(text, args.out)
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
