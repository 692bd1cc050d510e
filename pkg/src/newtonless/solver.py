"""Newton Sketch iterations, exact-Newton and gradient-descent baselines,
step-size policies and the distributed-averaging variant.

Randomness is drawn from ``stream(seed, trial, iteration, worker)``, so a
trace depends only on the configuration and never on execution order.
"""

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .leverage import approx_leverage, effective_dims, exact_leverage
from .rng import stream
from .sketch import NEEDS_PROFILE, SketchConfigError, SketchSpec, sketched_hessian

log = logging.getLogger(__name__)

METHODS = ("sketch", "newton", "gd")
STEP_MODES = ("auto-simple", "auto-sharp", "fixed")
TRIM_FRACTION = 0.02
MAX_FAILURE_FRACTION = 0.2
RATE_FLOOR = 1e-16


class SketchFailure(np.linalg.LinAlgError):
    """The sketched Hessian could not be factored (singular or indefinite)."""


class InvalidConfiguration(ValueError):
    pass


class TooManyFailures(RuntimeError):
    pass


# ---------------------------------------------------------------- step sizes

@dataclass(frozen=True)
class StepPolicy:
    mode: str = "auto-simple"
    fixedValue: float | None = None
    dims: tuple | None = None
    workers: int = 1

    def __post_init__(self):
        if self.mode not in STEP_MODES:
            raise InvalidConfiguration(f"unknown step mode {self.mode!r}")
        if self.mode == "fixed":
            if self.fixedValue is None or not 0 <= self.fixedValue <= 1:
                raise InvalidConfiguration("a fixed step needs a value in [0, 1]")
        if self.workers < 1:
            raise InvalidConfiguration("worker count must be at least 1")

    @classmethod
    def parse(cls, text, workers=1):
        """``auto-simple``, ``auto-sharp`` or ``fixed=<value>``."""
        if text.startswith("fixed"):
            _, _, val = text.partition("=")
            return cls("fixed", float(val) if val else 1.0, workers=workers)
        return cls(text, workers=workers)


def step_size(policy, m, dims=None):
    """Step size for sketch size ``m``.

    auto-simple: 1 - d_eff / m
    auto-sharp:  q (m - d~_eff) / (d_eff + q (m - d~_eff))
    """
    if policy.mode == "fixed":
        return float(policy.fixedValue)
    dims = dims if dims is not None else policy.dims
    if dims is None:
        raise InvalidConfiguration("automatic step sizes need (d_eff, d~_eff)")
    d_eff, d_tilde = dims
    if m <= d_eff:
        raise InvalidConfiguration(f"sketch size m = {m} must exceed d_eff = {d_eff:g}")
    if policy.mode == "auto-simple":
        return 1.0 - d_eff / m
    q = policy.workers
    gap = q * (m - d_tilde)
    return gap / (d_eff + gap)


def predicted_rate(policy, m, dims, mu=None):
    """Per-iteration local rate (1 - mu)^2 + mu^2 d_eff / (q (m - d~_eff)).

    For both automatic policies this equals 1 - mu at the unregularized
    optimum of the expression.
    """
    d_eff, d_tilde = dims
    if mu is None:
        mu = step_size(policy, m, dims)
    q = policy.workers
    if policy.mode == "auto-simple" and q == 1:
        return d_eff / m
    if policy.mode == "auto-sharp":
        return d_eff / (d_eff + q * (m - d_tilde))
    return (1 - mu) ** 2 + mu**2 * d_eff / (q * (m - d_tilde))


# ---------------------------------------------------------------- single steps

def _factor_solve(H, g):
    """Cholesky solve with one diagonal-jitter retry."""
    try:
        return sla.cho_solve(sla.cho_factor(H, check_finite=False), g, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        pass
    d = H.shape[0]
    jitter = 1e-12 * np.trace(H) / d
    try:
        return sla.cho_solve(sla.cho_factor(H + jitter * np.eye(d), check_finite=False), g,
                            check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SketchFailure("sketched Hessian is singular or indefinite") from exc


def _sketch_direction(obj, x, spec, rng, profile=None, d_eff=None):
    """Return (H_S^{-1} grad, seconds spent forming the sketched Hessian)."""
    view = obj.hessian_sqrt(x)
    t0 = time.perf_counter()
    H = sketched_hessian(view, spec, profile=profile, rng=rng, d_eff=d_eff)
    t1 = time.perf_counter()
    return _factor_solve(H, obj.gradient(x)), t1 - t0


def newton_sketch_step(obj, x, spec, mu, rng, profile=None, d_eff=None):
    """x - mu (A_f0^T S^T S A_f0 + Hess g)^{-1} grad f(x), one fresh sketch."""
    direction, _ = _sketch_direction(obj, x, spec, rng, profile, d_eff)
    return x - mu * direction


def newton_exact_step(obj, x, mu):
    g = obj.gradient(x)
    try:
        direction = sla.cho_solve(sla.cho_factor(obj.hessian(x)), g)
    except np.linalg.LinAlgError as exc:
        raise SketchFailure("Hessian is singular") from exc
    return x - mu * direction


def distributed_step(obj, x, spec, mu, q, rngs, profile=None, d_eff=None):
    """Average of ``q`` independent sketched Newton directions.

    ``rngs`` holds one generator per worker; with q = 1 and the same
    generator the result is bit-identical to :func:`newton_sketch_step`.
    """
    direction, _ = _distributed_direction(obj, x, spec, q, rngs, profile, d_eff)
    return x - (mu / q) * direction


def _distributed_direction(obj, x, spec, q, rngs, profile=None, d_eff=None):
    if q < 1 or len(rngs) != q:
        raise InvalidConfiguration(f"need exactly q = {q} worker streams")
    total = None
    seconds = 0.0
    for rng in rngs:
        direction, dt = _sketch_direction(obj, x, spec, rng, profile, d_eff)
        seconds += dt
        total = direction if total is None else total + direction
    return total, seconds


# ---------------------------------------------------------------- solve

@dataclass(frozen=True)
class SolverConfig:
    sketch: SketchSpec | None = None
    step: StepPolicy = field(default_factory=StepPolicy)
    iters: int = 10
    trials: int = 1
    seed: int = 0
    workers: int = 1
    refPoint: np.ndarray | None = None
    method: str = "sketch"
    leverage: str = "approx"
    threads: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfiguration(f"unknown method {self.method!r}")
        if self.iters < 1 or self.trials < 1 or self.workers < 1:
            raise InvalidConfiguration("iters, trials and workers must be at least 1")
        if self.method == "sketch" and self.sketch is None:
            raise InvalidConfiguration("sketch method needs a SketchSpec")
        if self.leverage not in ("exact", "approx"):
            raise InvalidConfiguration("leverage must be 'exact' or 'approx'")


@dataclass(eq=False)
class Trace:
    trial: int
    errorH: np.ndarray
    fGap: np.ndarray
    mu: np.ndarray
    sketch_seconds: np.ndarray
    step_seconds: np.ndarray
    failed: bool = False
    message: str = ""

    @property
    def completed(self):
        """Number of iterations actually run."""
        return len(self.errorH) - 1

    def ratio(self, t=None):
        t = self.completed if t is None else t
        return self.errorH[t] / self.errorH[0]


def trimmed_mean(values, trim=TRIM_FRACTION, failures=0, total=None):
    """Mean after discarding the largest ``trim`` fraction of ``total`` trials.

    Failed trials (already absent from ``values``) count against the trimmed
    budget.
    """
    values = np.sort(np.asarray(values, dtype=np.float64))
    total = values.size + failures if total is None else total
    drop = max(0, math.floor(trim * total) - failures)
    kept = values[: values.size - drop] if drop else values
    if kept.size == 0:
        return math.nan
    return float(kept.mean())


def rate_from_ratios(ratios, iters, failures=0, trim=TRIM_FRACTION):
    """(trimmed-mean of errorH_T / errorH_0)^(1/T); values below 1e-16 read as 0."""
    tm = trimmed_mean(ratios, trim=trim, failures=failures)
    if not np.isfinite(tm):
        return math.nan
    rate = tm ** (1.0 / iters)
    return 0.0 if rate < RATE_FLOOR else rate


@dataclass(eq=False)
class TraceSet:
    traces: list
    x_star: np.ndarray
    H_star: np.ndarray
    dims: tuple
    config: SolverConfig

    @property
    def failures(self):
        return sum(t.failed for t in self.traces)

    def ratios(self):
        return [t.ratio() for t in self.traces if not t.failed]

    def rate(self, trim=TRIM_FRACTION):
        return rate_from_ratios(self.ratios(), self.config.iters, self.failures, trim)

    def per_trial_rates(self):
        T = self.config.iters
        return np.array([t.ratio() ** (1.0 / T) for t in self.traces if not t.failed])


def resolve_threads(threads=None):
    if threads:
        return max(1, int(threads))
    env = os.environ.get("NEWTONLESS_THREADS")
    return max(1, int(env)) if env else 1


def _dims_at(obj, x):
    view = obj.hessian_sqrt(x)
    sv = np.linalg.svd(view.matrix, compute_uv=False)
    return effective_dims(sv, obj.lam)


def _profile_at(obj, x, cfg, trial, it):
    view = obj.hessian_sqrt(x)
    C = view.regHessian
    if cfg.leverage == "exact":
        return exact_leverage(view.matrix, C)
    # approximate scores are re-drawn from their own stream (worker slot 2^32)
    return approx_leverage(view.matrix, C, seed=stream(cfg.seed, trial, it, 1 << 32))


def _error_h(x, x_star, H):
    e = x - x_star
    return float(e @ H @ e)


def _gd_step_size(obj):
    if obj.is_quadratic:
        L = np.linalg.norm(obj.A, 2) ** 2 + obj.lam
    else:
        L = np.linalg.norm(obj.A, 2) ** 2 / (4 * obj.n) + obj.lam
    return 1.0 / L


def _run_trial(obj, x0, cfg, trial, x_star, H_star, shared):
    T = cfg.iters
    x = np.array(x0, dtype=np.float64)
    errs = [_error_h(x, x_star, H_star)]
    gaps = [obj.excess(x, x_star)]
    mus, sk_secs, st_secs = [], [], []
    spec = cfg.sketch
    needs_profile = cfg.method == "sketch" and spec.kind in NEEDS_PROFILE and spec.p is None
    auto = cfg.step.mode != "fixed"
    try:
        for it in range(T):
            t0 = time.perf_counter()
            dims = shared["dims"] if obj.is_quadratic else _dims_at(obj, x)
            profile = None
            if needs_profile:
                profile = shared.get("profile") if obj.is_quadratic else None
                if profile is None:
                    profile = _profile_at(obj, x, cfg, trial, it)
            sk = 0.0
            if cfg.method == "newton":
                mu = step_size(cfg.step, 0, dims) if cfg.step.mode == "fixed" else 1.0
                x = newton_exact_step(obj, x, mu)
            elif cfg.method == "gd":
                mu = shared["gd_step"]
                x = x - mu * obj.gradient(x)
            else:
                mu = step_size(cfg.step, spec.m, dims) if auto else cfg.step.fixedValue
                rngs = [stream(cfg.seed, trial, it, w) for w in range(cfg.workers)]
                if cfg.workers == 1:
                    direction, sk = _sketch_direction(obj, x, spec, rngs[0], profile, dims[0])
                    x = x - mu * direction
                else:
                    direction, sk = _distributed_direction(obj, x, spec, cfg.workers, rngs,
                                                           profile, dims[0])
                    x = x - (mu / cfg.workers) * direction
            t1 = time.perf_counter()
            errs.append(_error_h(x, x_star, H_star))
            gaps.append(obj.excess(x, x_star))
            mus.append(mu)
            sk_secs.append(sk)
            st_secs.append(t1 - t0)
        failed, message = False, ""
    except (SketchFailure, SketchConfigError, np.linalg.LinAlgError) as exc:
        failed, message = True, str(exc)
    return Trace(trial, np.array(errs), np.array(gaps), np.array(mus), np.array(sk_secs),
                 np.array(st_secs), failed, message)


def solve(obj, x0, cfg):
    """Run ``cfg.trials`` independent trials of ``cfg.iters`` iterations.

    The reference optimum is ``cfg.refPoint`` if given, else a
    high-precision direct solve. Raises :class:`TooManyFailures` when more
    than 20% of the trials fail.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x_star = obj.minimizer() if cfg.refPoint is None else np.asarray(cfg.refPoint, dtype=np.float64)
    H_star = obj.hessian(x_star)
    shared = {"dims": _dims_at(obj, x0 if obj.is_quadratic else x_star)}
    if cfg.method == "gd":
        shared["gd_step"] = _gd_step_size(obj)
    if (obj.is_quadratic and cfg.method == "sketch" and cfg.sketch.kind in NEEDS_PROFILE
            and cfg.sketch.p is None):
        shared["profile"] = _profile_at(obj, x0, cfg, 0, 0)
    if cfg.method == "sketch" and cfg.step.mode != "fixed" and obj.is_quadratic:
        # surface invalid (m, d_eff) before launching trials
        step_size(cfg.step, cfg.sketch.m, shared["dims"])

    threads = resolve_threads(cfg.threads)
    args = [(obj, x0, cfg, k, x_star, H_star, shared) for k in range(cfg.trials)]
    if threads > 1 and cfg.trials > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(lambda a: _run_trial(*a), args))
    else:
        traces = [_run_trial(*a) for a in args]

    failures = sum(t.failed for t in traces)
    if failures:
        log.warning("%d of %d trials failed", failures, cfg.trials)
    if failures > MAX_FAILURE_FRACTION * cfg.trials:
        raise TooManyFailures(f"{failures} of {cfg.trials} trials failed: {traces[0].message}")
    dims = shared["dims"] if obj.is_quadratic else _dims_at(obj, x_star)
    return TraceSet(traces, x_star, H_star, dims, cfg)


def with_sketch(cfg, **changes):
    return replace(cfg, sketch=replace(cfg.sketch, **changes))
