"""Experiment plans over sketch kinds, sizes and densities, and their CSVs."""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from ..leverage import effective_dims
from ..problem import Objective, as_dense_matrix
from ..rng import as_generator
from ..sketch import SPARSIFIED, SketchSpec
from ..solver import (
    SolverConfig,
    StepPolicy,
    predicted_rate,
    rate_from_ratios,
    solve,
)
from .datasets import read_matrix, synthetic_problem

TRACE_HEADER = ("problem,sketch,m,s,scaling,q,trial,iter,mu,errorH,fgap,"
                "sketch_seconds,step_seconds").split(",")
REPORT_HEADER = ("problem,sketch,m,s,scaling,q,step,trials,failures,rate,predicted,"
                 "rel_dev,sketch_seconds").split(",")
BASELINES = ("newton", "gd")
log = logging.getLogger(__name__)

PROBLEM_KINDS = {"ls": "least-squares", "ridge": "ridge-least-squares", "logistic": "logistic-l2"}


def estimate_deff(A, lam, mode="exact", probes=64, seed=0):
    """d_eff = tr(A (A^T A + lam I)^{-1} A^T).

    ``exact`` sums s_i^2 / (s_i^2 + lam) over the singular values;
    ``hutchinson`` averages z^T A H^{-1} A^T z over Rademacher probes z.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    A = as_dense_matrix(A)
    if mode == "exact":
        return effective_dims(np.linalg.svd(A, compute_uv=False), lam)[0]
    if mode != "hutchinson":
        raise ValueError(f"unknown mode {mode!r}")
    rng = as_generator(seed)
    n, d = A.shape
    Z = rng.choice(np.array([-1.0, 1.0]), size=(n, probes))
    AtZ = A.T @ Z
    factor = sla.cho_factor(A.T @ A + lam * np.eye(d))
    return float(np.einsum("ij,ij->", AtZ, sla.cho_solve(factor, AtZ)) / probes)


def lambda_for_deff(A, target, lo=1e-12, hi=None, iters=200):
    """Bisection (in log lam) for the ridge parameter giving d_eff = target."""
    sv = np.linalg.svd(as_dense_matrix(A), compute_uv=False)
    hi = hi or 1e6 * sv[0] ** 2
    lo_l, hi_l = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (lo_l + hi_l)
        if effective_dims(sv, math.exp(mid))[0] > target:
            lo_l = mid
        else:
            hi_l = mid
    return math.exp(0.5 * (lo_l + hi_l))


# ---------------------------------------------------------------- plans

@dataclass
class ExperimentPlan:
    """A grid of solver runs on one problem.

    ``problem`` is a dict with keys ``kind`` (ls|ridge|logistic), ``data``
    ("synthetic" or a matrix file whose last column holds the targets),
    ``n``, ``d``, ``lam``, ``seed``. Baselines ``newton`` and ``gd`` may
    appear among ``kinds``.
    """

    problem: dict
    kinds: list
    ms: list
    ss: list = field(default_factory=lambda: [None])
    scaling: str = "theory"
    step: str = "auto-simple"
    q: int = 1
    iters: int = 10
    trials: int = 50
    seed: int = 0
    out: str | None = None
    threads: int | None = None
    leverage: str = "approx"
    record_timing: bool = True

    def __post_init__(self):
        if not self.kinds or not self.ms:
            raise ValueError("plan grid must have at least one sketch kind and one m")

    def cells(self):
        for kind in self.kinds:
            if kind in BASELINES:
                yield kind, 0, None
                continue
            for m in self.ms:
                for s in (self.ss if kind in SPARSIFIED else [None]):
                    yield kind, int(m), s


def build_objective(problem):
    kind = PROBLEM_KINDS.get(problem.get("kind", "ls"), problem.get("kind", "ls"))
    data = problem.get("data", "synthetic")
    if data == "synthetic":
        A, b = synthetic_problem(kind, int(problem.get("n", 4096)), int(problem.get("d", 64)),
                                 seed=int(problem.get("seed", 0)))
    else:
        M = read_matrix(data)
        A, b = M[:, :-1], M[:, -1]
    lam = float(problem.get("lam", 0.0))
    return Objective(kind, A, b, lam)


@dataclass(frozen=True)
class CellReport:
    problem: str
    sketch: str
    m: int
    s: int | None
    scaling: str
    q: int
    step: str
    trials: int
    failures: int
    rate: float
    predicted: float
    rel_dev: float
    sketch_seconds: float

    @property
    def key(self):
        return (self.problem, self.sketch, self.m, self.s, self.scaling, self.q)


@dataclass
class RateReport:
    cells: list

    def __getitem__(self, key):
        for c in self.cells:
            if c.key[1:4] == key or c.key == key:
                return c
        raise KeyError(key)

    def rates(self):
        return {c.key: c.rate for c in self.cells}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _cell_rows(problem, kind, m, s, scaling, q, traces, record_timing):
    rows = []
    for tr in traces:
        for t in range(tr.completed + 1):
            if t == 0:
                mu = sk = st = 0.0
            else:
                mu = float(tr.mu[t - 1])
                sk = float(tr.sketch_seconds[t - 1]) if record_timing else 0.0
                st = float(tr.step_seconds[t - 1]) if record_timing else 0.0
            rows.append([problem, kind, m, s, scaling, q, tr.trial, t, mu,
                         float(tr.errorH[t]), float(tr.fGap[t]), sk, st])
    return rows


def _summarize(rows, iters):
    """Rate and mean sketching time from trace rows of a single cell."""
    first, last = {}, {}
    secs = []
    for r in rows:
        trial, it, err = r[6], r[7], r[9]
        if it == 0:
            first[trial] = err
        last[trial] = (it, err)
        if it > 0:
            secs.append(r[11])
    ratios = [last[k][1] / first[k] for k in first if last[k][0] == iters]
    failures = len(first) - len(ratios)
    rate = rate_from_ratios(ratios, iters, failures)
    return rate, failures, len(first), (float(np.mean(secs)) if secs else 0.0)


def run_plan(plan, objective=None):
    """Run every grid cell; write the trace CSV (and ``<out>.report.csv``).

    Returns ``(RateReport, trace_rows)``.
    """
    obj = objective if objective is not None else build_objective(plan.problem)
    pname = plan.problem.get("kind", "ls")
    x0 = np.zeros(obj.d)
    all_rows, cells = [], []
    for kind, m, s in plan.cells():
        q = plan.q if kind not in BASELINES else 1
        policy = StepPolicy.parse(plan.step, workers=q)
        if kind in BASELINES:
            cfg = SolverConfig(None, StepPolicy("auto-simple"), iters=plan.iters, trials=1,
                               seed=plan.seed, method=kind, threads=plan.threads)
        else:
            spec = SketchSpec(kind, m, s=s, scaling=plan.scaling, seed=plan.seed)
            cfg = SolverConfig(spec, policy, iters=plan.iters, trials=plan.trials, seed=plan.seed,
                               workers=q, leverage=plan.leverage, threads=plan.threads)
        try:
            result = solve(obj, x0, cfg)
        except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
            cells.append(CellReport(pname, kind, m, s, plan.scaling, q, plan.step, cfg.trials,
                                    cfg.trials, math.nan, math.nan, math.nan, 0.0))
            log.warning("cell %s m=%s s=%s failed: %s", kind, m, s, exc)
            continue
        rows = _cell_rows(pname, kind, m, s, plan.scaling, q, result.traces, plan.record_timing)
        rate, failures, trials, secs = _summarize(rows, plan.iters)
        if kind == "newton":
            predicted = 0.0
        elif kind == "gd":
            predicted = math.nan
        else:
            predicted = predicted_rate(policy, m, result.dims)
        rel = abs(rate - predicted) / predicted if predicted and np.isfinite(predicted) else math.nan
        cells.append(CellReport(pname, kind, m, s, plan.scaling, q, plan.step, trials, failures,
                                rate, float(predicted), float(rel), secs))
        all_rows.extend(rows)
    report = RateReport(cells)
    if plan.out:
        write_trace_csv(plan.out, all_rows)
        write_report_csv(report_path(plan.out), report)
    return report, all_rows


def report_path(out):
    p = Path(out)
    return p.with_name(p.stem + ".report.csv")


def write_trace_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _opt_int(text):
    return int(text) if text != "" else None


def read_trace_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header}")
        rows = []
        for r in reader:
            rows.append([r[0], r[1], int(r[2]), _opt_int(r[3]), r[4], int(r[5]), int(r[6]),
                         int(r[7])] + [float(v) for v in r[8:]])
    return rows


def report_from_trace_rows(rows, iters):
    """Recompute rates per cell (keyed like :attr:`CellReport.key`) from trace rows."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[:6]), []).append(r)
    return {k: _summarize(v, iters)[0] for k, v in groups.items()}


def write_report_csv(path, report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for c in report.cells:
        w.writerow([_fmt(getattr(c, h)) for h in REPORT_HEADER])
    Path(path).write_text(buf.getvalue())


def read_report_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != REPORT_HEADER:
            raise ValueError(f"{path}: unexpected report header {header}")
        cells = []
        for r in reader:
            cells.append(CellReport(r[0], r[1], int(r[2]), _opt_int(r[3]), r[4], int(r[5]), r[6],
                                    int(r[7]), int(r[8]), float(r[9]), float(r[10]),
                                    float(r[11]), float(r[12])))
    return RateReport(cells)
