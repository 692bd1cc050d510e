"""Acceptance checks at the stated sizes and tolerances.

Each test prints one PASS/FAIL line (collected again in the terminal
summary) before asserting.
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from newtonless.bench.datasets import gen_coherent, synthetic_problem
from newtonless.bench.experiments import estimate_deff, lambda_for_deff
from newtonless.moments import estimate_moments, gaussian_exact_moments
from newtonless.problem import Objective
from newtonless.rng import stream
from newtonless.sketch import SketchSpec, apply_sketch, build_sketch, count_madds
from newtonless.solver import (
    SolverConfig,
    StepPolicy,
    newton_exact_step,
    newton_sketch_step,
    solve,
)
from newtonless.leverage import exact_leverage

TESTS = Path(__file__).parent


@pytest.fixture(scope="module")
def gaussian_20_4():
    A = stream(100).standard_normal((64, 4))
    t0 = time.perf_counter()
    est = estimate_moments(A, None, SketchSpec("gaussian", 20, scaling="unbiased"), 20000, seed=0)
    return est, time.perf_counter() - t0


def test_c01_gaussian_second_moment(gaussian_20_4, verdict):
    est, secs = gaussian_20_4
    _, target = gaussian_exact_moments(20, 4)
    assert target == pytest.approx(285 / 208)
    value = np.trace(est.meanQ2) / 4
    rel = abs(value - target) / target
    ok = rel <= 0.02 and secs < 30
    verdict(1, ok, f"trace(E[Q^2])/d = {value:.4f} vs {target:.4f} (rel {rel:.4f} <= 0.02), "
                   f"{secs:.1f}s < 30s")
    assert ok


def test_c02_gaussian_first_moment(gaussian_20_4, verdict):
    est, _ = gaussian_20_4
    ok = est.devFirst <= 0.02
    verdict(2, ok, f"||E[Q] - I|| = {est.devFirst:.4f} <= 0.02")
    assert ok


def test_c03_less_inverse_moments(verdict):
    A = stream(101).standard_normal((1024, 8))
    t0 = time.perf_counter()
    est = estimate_moments(A, None, SketchSpec("less", 128), 10000, seed=1)
    secs = time.perf_counter() - t0
    ok = est.devFirst <= 0.25 and est.devSecond <= 0.25 and secs < 120
    verdict(3, ok, f"devFirst {est.devFirst:.4f}, devSecond {est.devSecond:.4f} (<= 0.25), "
                   f"failures {est.failures}, {secs:.1f}s < 120s")
    assert ok


@pytest.fixture(scope="module")
def coherent_ls_rates():
    A, b = synthetic_problem("least-squares", 4096, 50, seed=0)
    obj = Objective("ls", A, b)
    out = {}
    for kind, s in (("less", 50), ("gaussian", None)):
        t0 = time.perf_counter()
        ts = solve(obj, np.zeros(50), SolverConfig(SketchSpec(kind, 400, s=s), iters=10,
                                                  trials=50, seed=3))
        out[kind] = (ts.rate(), ts.failures, time.perf_counter() - t0)
    return out


def test_c04_less_rate(coherent_ls_rates, verdict):
    rate, failures, secs = coherent_ls_rates["less"]
    ok = 0.094 <= rate <= 0.156 and secs < 180
    verdict(4, ok, f"LESS rate {rate:.4f} in [0.094, 0.156], failures {failures}, "
                   f"{secs:.1f}s < 180s")
    assert ok


def test_c05_less_matches_gaussian(coherent_ls_rates, verdict):
    r_less = coherent_ls_rates["less"][0]
    r_gauss = coherent_ls_rates["gaussian"][0]
    gap = abs(r_less - r_gauss)
    ok = gap <= 0.15 * r_gauss
    verdict(5, ok, f"|{r_less:.4f} - {r_gauss:.4f}| = {gap:.4f} <= {0.15 * r_gauss:.4f}")
    assert ok


def test_c06_sparsity_sweep(verdict):
    n, d = 4096, 128
    m = 8 * d
    A, b = synthetic_problem("least-squares", n, d, seed=0)
    obj = Objective("ls", A, b)
    prof = exact_leverage(A)
    ss = [1, d // 4, d, 4 * d]
    rates, madds = [], []
    for s in ss:
        spec = SketchSpec("less-uniform", m, s=s)
        rates.append(solve(obj, np.zeros(d), SolverConfig(spec, iters=10, trials=50, seed=3)).rate())
        S = build_sketch(spec, n, d=d, rng=stream(4, s))
        with count_madds() as counter:
            apply_sketch(S, A)
        madds.append(counter.total)
    ss_arr, madds_arr = np.array(ss, float), np.array(madds, float)
    slope = madds_arr @ ss_arr / (ss_arr @ ss_arr)
    resid = np.max(np.abs(madds_arr - slope * ss_arr) / (slope * ss_arr))
    monotone = all(b_ <= a_ for a_, b_ in zip(rates, rates[1:]))
    flat = abs(rates[2] - rates[3]) <= 0.10 * rates[3]
    bounded = all(mad <= m * s * d for mad, s in zip(madds, ss))
    linear = resid <= 0.10 and bounded
    ok = monotone and flat and linear
    verdict(6, ok, f"coherence {prof.coherence:.1f}; rates "
                   + ", ".join(f"s={s}:{r:.4f}" for s, r in zip(ss, rates))
                   + f"; flat {abs(rates[2] - rates[3]) / rates[3]:.3f} <= 0.10; "
                   f"madds/s linear (max dev {resid:.3f})")
    assert ok


def test_c07_regularized_rate(verdict):
    A, b = synthetic_problem("least-squares", 4096, 64, seed=0)
    lam = lambda_for_deff(A, 16.0)
    d_eff = estimate_deff(A, lam)
    m = round(8 * d_eff)
    obj = Objective("ridge", A, b, lam)
    t0 = time.perf_counter()
    ts = solve(obj, np.zeros(64), SolverConfig(SketchSpec("less", m), StepPolicy("auto-simple"),
                                               iters=10, trials=50, seed=3))
    secs = time.perf_counter() - t0
    bound = d_eff / m * 1.35
    ok = ts.rate() <= bound and secs < 180
    verdict(7, ok, f"d_eff {d_eff:.2f}, m {m}, rate {ts.rate():.4f} <= {bound:.4f}, "
                   f"{secs:.1f}s < 180s")
    assert ok


def test_c08_distributed_averaging(verdict):
    rng = stream(11)
    A = rng.standard_normal((1024, 16))
    obj = Objective("ls", A, A @ rng.standard_normal(16) + rng.standard_normal(1024))
    t0 = time.perf_counter()
    rates = {}
    for q in (1, 4):
        cfg = SolverConfig(SketchSpec("less", 128), StepPolicy("auto-sharp", workers=q),
                           iters=10, trials=50, seed=3, workers=q)
        rates[q] = solve(obj, np.zeros(16), cfg).rate()
    secs = time.perf_counter() - t0
    target = 16 / (16 + 4 * (128 - 16))
    rel = abs(rates[4] - target) / target
    ok = rel <= 0.30 and rates[4] < rates[1] / 2 and secs < 120
    verdict(8, ok, f"rate(q=4) {rates[4]:.4f} vs {target:.4f} (rel {rel:.3f} <= 0.30); "
                   f"rate(q=1) {rates[1]:.4f}; {secs:.1f}s < 120s")
    assert ok


def test_c09_one_step_unbiasedness(verdict):
    n, d, m, trials = 1024, 8, 128, 5000
    rng = stream(12)
    A = rng.standard_normal((n, d))
    obj = Objective("ls", A, A @ rng.standard_normal(d) + rng.standard_normal(n))
    x0 = np.zeros(d)
    mu = 1 - d / m
    exact = newton_exact_step(obj, x0, mu)
    H = obj.hessian(x0)

    gauss = SketchSpec("gaussian", m, scaling="unbiased")
    xs = np.array([newton_sketch_step(obj, x0, gauss, mu, stream(13, k), d_eff=d)
                   for k in range(trials)])
    se = xs.std(axis=0, ddof=1) / math.sqrt(trials)
    z = np.max(np.abs(xs.mean(axis=0) - exact) / se)

    less = SketchSpec("less", m)
    prof = exact_leverage(A)
    ys = np.array([newton_sketch_step(obj, x0, less, mu, stream(14, k), profile=prof)
                   for k in range(trials)])
    step = exact - x0
    err = ys.mean(axis=0) - exact
    rel = math.sqrt(err @ H @ err / (step @ H @ step))
    budget = 10 * math.sqrt(d) / m
    ok = z <= 3 and rel <= budget
    verdict(9, ok, f"Gaussian max |z| {z:.2f} <= 3; LESS relative bias {rel:.4f} <= {budget:.4f}")
    assert ok


SUITES = {
    "sparsifier E[xi^2] = 1": ["test_sketch.py", "-k", "second_moment_identity"],
    "leverage invariants": ["test_leverage.py", "-k",
                            "invariants or rotation or coherence or bounds"],
    "finite differences": ["test_problem.py", "-k", "finite_differences"],
    "deterministic replay": ["test_bench.py", "-k", "byte_identical or sweep_deterministic"],
}


def test_c10_property_suites(verdict):
    results = []
    for name, args in SUITES.items():
        t0 = time.perf_counter()
        proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                               str(TESTS / args[0]), *args[1:]],
                              capture_output=True, text=True, cwd=TESTS.parent)
        secs = time.perf_counter() - t0
        results.append((name, proc.returncode == 0 and secs < 60, secs))
    ok = all(r[1] for r in results)
    verdict(10, ok, "; ".join(f"{n} {'ok' if g else 'FAIL'} {s:.1f}s" for n, g, s in results))
    assert ok
