"""Command-line entry point: ``newtonless {solve,sweep,moments,levscores,gen-data}``.

Data files (``--data``) hold the design matrix with the targets appended as
the last column, in CSV or NLMX binary form; ``gen-data`` writes exactly that.
"""

import argparse
import csv
import logging
import sys

import numpy as np

from ..leverage import approx_leverage, exact_leverage
from ..moments import estimate_moments
from ..rng import stream
from ..sketch import KINDS, SCALINGS, SketchSpec
from ..solver import resolve_threads
from .datasets import gen_coherent, read_matrix, synthetic_problem, write_matrix
from .experiments import BASELINES, REPORT_HEADER, ExperimentPlan, run_plan

MOMENTS_HEADER = ["kind", "m", "d", "lambda", "trials", "devFirst", "devSecond", "failures"]


def _csv_list(cast):
    def parse(text):
        return [cast(t) for t in text.split(",") if t]
    return parse


def _opt_int(text):
    return None if text in ("", "default", "none") else int(text)


def _add_problem_args(p):
    p.add_argument("--problem", choices=["ls", "ridge", "logistic"], default="ls")
    p.add_argument("--data", default="synthetic",
                   help="'synthetic' or a CSV/NLMX file whose last column holds the targets")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)


def _add_run_args(p, multi):
    kinds = list(KINDS) + list(BASELINES)
    if multi:
        p.add_argument("--sketch", type=_csv_list(str), default=["less-uniform"],
                       help="comma-separated kinds from: " + ",".join(kinds))
        p.add_argument("--m", type=_csv_list(int), required=True)
        p.add_argument("--nnz-per-row", type=_csv_list(_opt_int), default=[None])
    else:
        p.add_argument("--sketch", choices=kinds, default="less-uniform")
        p.add_argument("--m", type=int, required=True)
        p.add_argument("--nnz-per-row", type=_opt_int, default=None)
    p.add_argument("--scaling", choices=SCALINGS, default="theory")
    p.add_argument("--step", default="auto-simple",
                   help="auto-simple | auto-sharp | fixed=<value>")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--workers-q", type=int, default=1)
    p.add_argument("--threads", type=int, default=None,
                   help="defaults to $NEWTONLESS_THREADS, then 1")
    p.add_argument("--leverage", choices=["approx", "exact"], default="approx")
    p.add_argument("--deterministic", action="store_true",
                   help="write zeros in the timing columns so reruns are byte-identical")
    p.add_argument("--out", default=None)


def _load_matrix(args, with_targets=True):
    if args.data == "synthetic":
        return gen_coherent(args.n, args.d, seed=args.seed)
    M = read_matrix(args.data)
    return M[:, :-1] if with_targets else M


def _plan_from_args(args, multi):
    problem = {"kind": args.problem, "data": args.data, "n": args.n, "d": args.d,
               "lam": args.lam, "seed": args.seed}
    kinds = args.sketch if multi else [args.sketch]
    ms = args.m if multi else [args.m]
    ss = args.nnz_per_row if multi else [args.nnz_per_row]
    return ExperimentPlan(problem, kinds, ms, ss, scaling=args.scaling, step=args.step,
                          q=args.workers_q, iters=args.iters, trials=args.trials,
                          seed=args.seed, out=args.out, threads=resolve_threads(args.threads),
                          leverage=args.leverage, record_timing=not args.deterministic)


def cmd_run(args, multi):
    report, _ = run_plan(_plan_from_args(args, multi))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for c in report.cells:
        w.writerow([("" if getattr(c, h) is None else getattr(c, h)) for h in REPORT_HEADER])
    return 0


def cmd_moments(args):
    if args.data == "synthetic":
        A = stream(args.seed, 1).standard_normal((args.n, args.d))
    else:
        A = _load_matrix(args, with_targets=not args.matrix_only)
    rows = []
    for kind in args.sketch:
        for m in args.m:
            spec = SketchSpec(kind, m, s=args.nnz_per_row, scaling=args.scaling, seed=args.seed)
            est = estimate_moments(A, args.lam, spec, args.trials, seed=args.seed,
                                   threads=resolve_threads(args.threads))
            rows.append([kind, m, A.shape[1], args.lam, args.trials, est.devFirst,
                         est.devSecond, est.failures])
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(MOMENTS_HEADER)
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


def cmd_levscores(args):
    A = _load_matrix(args, with_targets=not args.matrix_only)
    C = args.lam if args.lam > 0 else None
    if args.approx:
        prof = approx_leverage(A, C, oversample=args.oversample, seed=args.seed)
    else:
        prof = exact_leverage(A, C)
    print(f"n={A.shape[0]} d={A.shape[1]} d_eff={prof.dEff:.6g} "
          f"d_eff_tilde={prof.dEffTilde:.6g} coherence={prof.coherence:.6g} exact={prof.exact}")
    if args.out:
        np.savetxt(args.out, prof.scores, delimiter=",", fmt="%.17g")
    return 0


def cmd_gen_data(args):
    kind = {"ls": "least-squares", "ridge": "ridge-least-squares",
            "logistic": "logistic-l2"}[args.problem]
    A, b = synthetic_problem(kind, args.n, args.d, seed=args.seed)
    M = A if args.no_targets else np.column_stack([A, b])
    write_matrix(args.out, M, fmt=args.format)
    print(f"wrote {M.shape[0]}x{M.shape[1]} matrix to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="newtonless", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one sketch configuration")
    _add_problem_args(p)
    _add_run_args(p, multi=False)

    p = sub.add_parser("sweep", help="run a grid of kinds x m x nnz-per-row")
    _add_problem_args(p)
    _add_run_args(p, multi=True)

    p = sub.add_parser("moments", help="Monte-Carlo inverse moments of the sketched Hessian")
    _add_problem_args(p)
    p.set_defaults(n=1024, d=8)
    p.add_argument("--sketch", type=_csv_list(str), default=["less"])
    p.add_argument("--m", type=_csv_list(int), required=True)
    p.add_argument("--nnz-per-row", type=_opt_int, default=None)
    p.add_argument("--scaling", choices=SCALINGS, default="theory")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--matrix-only", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("levscores", help="leverage scores, effective dimensions, coherence")
    _add_problem_args(p)
    p.add_argument("--approx", action="store_true")
    p.add_argument("--oversample", type=float, default=8)
    p.add_argument("--matrix-only", action="store_true",
                   help="the data file has no target column")
    p.add_argument("--out", default=None)

    p = sub.add_parser("gen-data", help="write a synthetic high-coherence problem")
    p.add_argument("--problem", choices=["ls", "ridge", "logistic"], default="ls")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["csv", "nlmx"], default=None)
    p.add_argument("--no-targets", action="store_true")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "solve":
        return cmd_run(args, multi=False)
    if args.command == "sweep":
        return cmd_run(args, multi=True)
    if args.command == "moments":
        return cmd_moments(args)
    if args.command == "levscores":
        return cmd_levscores(args)
    return cmd_gen_data(args)


if __name__ == "__main__":
    sys.exit(main())
