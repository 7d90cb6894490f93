"""Command line front end.

    polygrade refine|convergence|hardy|norms|export --config <path>
              [--levels N] [--degree m] [--kappa x] [--out dir]

Exit codes: 0 success, 2 validation error, 3 numerical failure.  The env var
POLYGRADE_THREADS caps BLAS/OpenMP parallelism (applied before numpy loads).
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("POLYGRADE_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polygrade",
        description="Graded mesh refinement and FEM verification studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("refine", "convergence", "hardy", "norms"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--levels", type=int, default=None)
        p.add_argument("--degree", type=int, default=None)
        p.add_argument("--kappa", type=float, default=None)
        p.add_argument("--out", default=None)
    p = sub.add_parser("export")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("vtk", "plain"), default="vtk")
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)

    from .domain import NumericalError, ValidationError

    try:
        return _dispatch(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def _dispatch(args) -> int:
    from . import study

    if args.command == "export":
        path = study.cmd_export(args.mesh, args.out, args.format)
        print(path)
        return 0

    overrides = {"levels": args.levels, "degree": args.degree,
                 "kappa": args.kappa, "out": args.out}
    config = study.load_config(args.config, overrides)
    os.makedirs(config.out, exist_ok=True)

    if args.command == "refine":
        written = study.cmd_refine(config)
        for path in written:
            print(path)
        return 0

    if args.command == "convergence":
        report = study.cmd_convergence(config)
        csv_path = os.path.join(config.out, "convergence.csv")
        with open(csv_path, "w") as fh:
            fh.write(report.to_csv())
        interp_path = os.path.join(config.out, "convergence_interp.csv")
        with open(interp_path, "w") as fh:
            fh.write(report.interp_csv())
        print(report.to_csv(), end="")
        print(csv_path)
        return 0

    if args.command == "hardy":
        rows, verdict = study.cmd_hardy(config)
        text = study.hardy_csv(rows, verdict)
        csv_path = os.path.join(config.out, "hardy.csv")
        with open(csv_path, "w") as fh:
            fh.write(text)
        print(text, end="")
        return 0

    if args.command == "norms":
        rows = study.cmd_norms(config)
        text = study.norms_csv(rows)
        csv_path = os.path.join(config.out, "norms.csv")
        with open(csv_path, "w") as fh:
            fh.write(text)
        print(text, end="")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
