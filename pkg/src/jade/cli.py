"""Command-line interface: the count-table pipeline and the simulation bench."""

import argparse
import os
import sys

import numpy as np

from . import __version__, simbench
from .pipeline import PipelineConfig, run_pipeline


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="jade",
        description="Joint smoothing and differential-region detection for "
        "grouped genomic phenotypes.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline on a count table")
    run.add_argument("--input", required=True, help="TSV count table")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--order", type=int, default=2, help="trend order k")
    run.add_argument("--folds", type=int, default=5, help="cross-validation folds")
    run.add_argument("--epsilon", type=float, default=0.005,
                     help="fusion detection threshold")
    run.add_argument("--max-gap", type=int, default=2000,
                     help="split segments at gaps of at least this many bp")
    run.add_argument("--min-sites", type=int, default=20,
                     help="drop segments with fewer sites")
    run.add_argument("--workers", type=int, default=1, help="parallel segments")
    run.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
    run.add_argument("--gamma-count", type=int, default=100,
                     help="fusion-penalty grid size")
    run.add_argument("--lambda-count", type=int, default=30,
                     help="smoothing-penalty grid size")
    run.add_argument("--group-order", default=None,
                     help="comma-separated developmental ordering of group labels")

    bench = sub.add_parser("simbench", help="run the simulation bench")
    bench.add_argument("--regime", choices=simbench.REGIMES, required=True)
    bench.add_argument("--sigma", type=float, default=1.0)
    bench.add_argument("--rho", type=float, default=0.0,
                       help="carry-over coefficient for the correlated regime")
    bench.add_argument("--sigma-re", type=float, default=None,
                       help="random-shift standard deviation")
    bench.add_argument("--re-fraction", type=float, default=None,
                       help="fraction of variance from random effects (re regime)")
    bench.add_argument("--reps", type=int, default=50)
    bench.add_argument("--p", type=int, default=300)
    bench.add_argument("--n-per-group", type=int, default=10)
    bench.add_argument("--spacing", type=float, default=None,
                       help="site spacing (default 1, or 5 for binomial)")
    bench.add_argument("--read-depth-mean", type=float, default=9.0)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--methods", default="jade,ttest_raw",
                       help="comma-separated: jade, ttest_raw, ttest_smoothed")
    bench.add_argument("--gamma-count", type=int, default=100)
    bench.add_argument("--folds", type=int, default=5)
    bench.add_argument("--epsilon", type=float, default=0.005)
    bench.add_argument("--out", required=True, help="output CSV path")
    return parser


def _cmd_run(args):
    config = PipelineConfig(
        input_path=args.input,
        out_dir=args.out,
        k=args.order,
        folds=args.folds,
        epsilon=args.epsilon,
        max_gap=args.max_gap,
        min_sites=args.min_sites,
        workers=args.workers,
        seed=args.seed,
        gamma_count=args.gamma_count,
        lambda_count=args.lambda_count,
        group_order=args.group_order.split(",") if args.group_order else None,
    )
    results, paths = run_pipeline(config)
    n_bad = sum(1 for r in results if r.error is not None or not r.converged)
    print(f"{len(results)} segment(s); {n_bad} failed or unconverged")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0 if n_bad == 0 else 1


def _cmd_simbench(args):
    spacing = args.spacing
    if spacing is None:
        spacing = 5.0 if args.regime == "binomial" else 1.0
    if args.regime == "re":
        if args.re_fraction is None:
            print("simbench: --re-fraction is required for the re regime",
                  file=sys.stderr)
            return 2
        config = simbench.SimConfig.random_effects(
            args.re_fraction, n_per_group=args.n_per_group, p=args.p,
            spacing=spacing, seed=args.seed,
        )
    else:
        config = simbench.SimConfig(
            regime=args.regime,
            sigma=args.sigma,
            rho=args.rho,
            sigma_re=args.sigma_re if args.sigma_re is not None else 0.0,
            n_per_group=args.n_per_group,
            p=args.p,
            spacing=spacing,
            read_depth_mean=args.read_depth_mean,
            seed=args.seed,
        )
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    rows, _ = simbench.run_benchmark(
        config, args.reps, methods=methods, workers=args.workers,
        epsilon=args.epsilon, gamma_count=args.gamma_count, n_folds=args.folds,
    )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    simbench.write_roc_csv(rows, args.out)
    grid = np.array(sorted({row["fpr"] for row in rows}))
    for method in methods:
        sub = {row["fpr"]: row["mean_tpr"] for row in rows if row["method"] == method}
        at = ", ".join(f"TPR@{f:g}={sub[f]:.3f}" for f in (0.02, 0.05, 0.10) if f in sub)
        print(f"{method}: {at}")
    print(f"wrote {args.out} ({len(rows)} rows, {grid.size} FPR values)")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "simbench":
        return _cmd_simbench(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
