"""``deconv`` command line.

Exit codes: 0 success, 1 usage error, 2 runtime or model error. Runtime
errors print one JSON line ``{"error": "<Name>", "detail": "..."}`` on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from . import jsonio
from .efficiency import GridFunction, solve_adjoint
from .errors import DeconvError
from .functionals import confidence_interval, parse_functional, plug_in_report
from .laplace_location import median_mle
from .model import DiscreteDistribution, NoiseKernel, read_sample_csv, simulate, write_sample_csv
from .montecarlo import StudyConfig, builtin_scenario, run_study
from .npmle import NpmleConfig, fit_npmle

FUNCTIONAL_HELP = "mean | moment:r | mgf:t | cdf:y1 | interval:y1,y2 | const:c"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _kernel(args) -> NoiseKernel:
    if args.kernel in ("exp", "exponential"):
        return NoiseKernel.exponential(args.param)
    return NoiseKernel.laplace(args.param)


def _mixing(text: str):
    """Discrete mixing {"support": [...], "weights": [...]} or {"y": w, ...}; {"uniform": [lo, hi]} for a density."""
    d = jsonio.load_json_arg(text)
    if isinstance(d, dict) and "uniform" in d:
        lo, hi = (float(v) for v in d["uniform"])
        return GridFunction.uniform_density(lo, hi, 2)
    if isinstance(d, dict) and "support" in d:
        return DiscreteDistribution.from_dict(d)
    if isinstance(d, dict):
        return DiscreteDistribution([float(k) for k in d], [float(v) for v in d.values()])
    raise ValueError("mixing must be a JSON object")


def _emit(obj, out: Optional[str]) -> None:
    text = jsonio.dumps(obj)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _add_kernel(p, required=True):
    p.add_argument("--kernel", choices=("exp", "exponential", "laplace"), required=required)
    p.add_argument("--param", type=float, default=1.0, help="exponential rate or Laplace scale (default 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="deconv", description="Deconvolution with exponential or Laplace noise.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a seeded sample X = Y + Z")
    p.add_argument("--mixing", required=True, help="JSON object or path to a JSON file")
    _add_kernel(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="CSV path")

    p = sub.add_parser("fit", help="NPMLE of the mixing distribution")
    p.add_argument("--data", required=True)
    _add_kernel(p)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--solver", choices=("em", "cnm"), default="cnm")
    p.add_argument("--out")

    p = sub.add_parser("estimate", help="estimate a linear functional of the mixing distribution")
    p.add_argument("--data", required=True)
    p.add_argument("--functional", required=True, help=FUNCTIONAL_HELP)
    p.add_argument("--method", choices=("naive", "plugin"), default="naive")
    p.add_argument("--level", type=float, default=0.95)
    _add_kernel(p)
    p.add_argument("--solver", choices=("em", "cnm"), default="cnm", help="NPMLE solver for --method plugin")
    p.add_argument("--out")

    p = sub.add_parser("median", help="Laplace location MLE")
    p.add_argument("--data", required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out")

    p = sub.add_parser("adjoint", help="least-squares adjoint equation solve on refining grids")
    p.add_argument("--functional", required=True, help=FUNCTIONAL_HELP)
    _add_kernel(p)
    p.add_argument("--mixing", required=True, help='discrete mixing JSON or {"uniform": [lo, hi]}')
    p.add_argument("--grids", default="129,257,513")
    p.add_argument("--out")

    p = sub.add_parser("study", help="Monte Carlo study from a JSON config or a built-in scenario name")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    return ap


def _run(args) -> None:
    cmd = args.command
    if cmd == "simulate":
        mixing = _mixing(args.mixing)
        if not isinstance(mixing, DiscreteDistribution):
            raise ValueError("simulate needs a discrete mixing distribution")
        if not 0 <= args.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        write_sample_csv(args.out, simulate(mixing, _kernel(args), args.n, args.seed))
    elif cmd == "fit":
        cfg = NpmleConfig(tol_gradient=args.tol, max_iterations=args.max_iter, method=args.solver)
        res = fit_npmle(read_sample_csv(args.data), _kernel(args), cfg, raise_on_failure=True)
        _emit(res, args.out)
    elif cmd == "estimate":
        spec = parse_functional(args.functional)
        sample = read_sample_csv(args.data)
        kernel = _kernel(args)
        if args.method == "naive":
            report = confidence_interval(spec, sample, args.level, kernel)
        else:
            fit = fit_npmle(sample, kernel, NpmleConfig(method=args.solver), raise_on_failure=True)
            report = plug_in_report(spec, sample, fit, args.level, kernel)
        _emit(report, args.out)
    elif cmd == "median":
        _emit(median_mle(read_sample_csv(args.data), args.scale), args.out)
    elif cmd == "adjoint":
        grids = [int(g) for g in args.grids.split(",") if g.strip()]
        report = solve_adjoint(parse_functional(args.functional), _kernel(args), _mixing(args.mixing),
                               grid_sizes=grids)
        _emit(report, args.out)
    elif cmd == "study":
        text = args.config
        if Path(text).exists() or text.strip().startswith("{"):
            config = StudyConfig.from_dict(jsonio.load_json_arg(text))
        else:
            config = builtin_scenario(text)
        run_study(config).write(args.out_dir)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _run(args)
    except (DeconvError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        name = type(exc).__name__
        detail = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        sys.stderr.write(json.dumps({"error": name, "detail": str(detail)}) + "\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
