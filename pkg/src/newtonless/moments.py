"""Monte-Carlo estimates of the inverse moments of the sketched Hessian.

For H = A^T A + C and U = A H^{-1/2} the normalized inverse is

    Q = H^{1/2} (A^T S^T S A + C)^{-1} H^{1/2}
      = (U^T S^T S U + H^{-1/2} C H^{-1/2})^{-1},

and the second form is the one evaluated here (d x d work per draw once
S U is formed).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .leverage import SingularHessianError, _as_reg, effective_dims, exact_leverage
from .problem import as_dense_matrix
from .rng import stream
from .sketch import apply_sketch, build_sketch

MAX_FAILURE_FRACTION = 0.10


class MomentLabError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MomentEstimate:
    meanQ: np.ndarray
    meanQ2: np.ndarray
    trials: int
    failures: int
    devFirst: float
    devSecond: float
    target: np.ndarray
    # per-draw standard error of trace(Q^2)/d, for exact-formula checks
    traceQ2_se: float = math.nan

    @property
    def accepted(self):
        return self.trials - self.failures


def gaussian_exact_moments(m, d):
    """E[Q] and E[Q^2] scale factors for an i.i.d. Gaussian sketch scaled by
    1/sqrt(m - d - 1) with C = 0: (1, (m-1)(m-d-1) / ((m-d)(m-d-3)))."""
    if m <= d + 3:
        raise ValueError("the exact second moment needs m > d + 3")
    return 1.0, (m - 1) * (m - d - 1) / ((m - d) * (m - d - 3))


def second_moment_target(singular_values, lam, m, basis=None):
    """I + d_eff / (m - d~_eff) U^T U, written in the eigenbasis of U^T U.

    U^T U is diagonal there with entries s_i^2 / (s_i^2 + lam). Pass
    ``basis`` (the right singular vectors of A, as columns) to rotate the
    result back into the original coordinates.
    """
    s2 = np.asarray(singular_values, dtype=np.float64) ** 2
    d_eff, d_tilde = effective_dims(singular_values, lam)
    if m <= d_tilde:
        raise ValueError(f"m = {m} must exceed d~_eff = {d_tilde:g}")
    ratios = np.ones_like(s2) if lam == 0 else s2 / (s2 + lam)
    diag = 1.0 + d_eff / (m - d_tilde) * ratios
    if basis is None:
        return np.diag(diag)
    return (basis * diag) @ basis.T


def _spectral(M):
    M = 0.5 * (M + M.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(M))))


def _chunk(U, R, spec, profile, d_eff, seed, trials):
    d = U.shape[1]
    s1 = np.zeros((d, d))
    s2 = np.zeros((d, d))
    t1 = 0.0
    t2 = 0.0
    failures = 0
    n = U.shape[0]
    eye = np.eye(d)
    for k in trials:
        S = build_sketch(spec, n, d=d, profile=profile, d_eff=d_eff, rng=stream(seed, k))
        SU = apply_sketch(S, U)
        M = SU.T @ SU + R
        try:
            L = np.linalg.cholesky(0.5 * (M + M.T))
        except np.linalg.LinAlgError:
            failures += 1
            continue
        Linv = np.linalg.solve(L, eye)
        Q = Linv.T @ Linv
        Q2 = Q @ Q
        s1 += Q
        s2 += Q2
        tr = np.trace(Q2) / d
        t1 += tr
        t2 += tr * tr
    return s1, s2, t1, t2, failures


def estimate_moments(A, C, spec, trials, seed=0, threads=1, chunk=256):
    """Monte-Carlo E[Q], E[Q^2] over ``trials`` independent sketches.

    Draws whose sketched matrix is not positive definite are excluded and
    counted; more than 10% failures aborts. Deviations are spectral norms
    against I and against I + d_eff/(m - d~_eff) U^T U.
    """
    A = as_dense_matrix(A)
    n, d = A.shape
    Creg = _as_reg(C, d)
    H = A.T @ A + Creg
    evals, V = np.linalg.eigh(H)
    if evals[0] <= 1e-12 * evals[-1]:
        raise SingularHessianError("A^T A + C is singular")
    Hm12 = (V / np.sqrt(evals)) @ V.T
    U = A @ Hm12
    R = Hm12 @ Creg @ Hm12
    profile = exact_leverage(A, Creg) if spec.kind in ("less", "rrs-lev") and spec.p is None else None
    UtU = U.T @ U
    d_eff = float(np.trace(UtU))
    d_tilde = float(np.sum(UtU * UtU))
    if spec.m <= d_tilde:
        raise MomentLabError(f"m = {spec.m} must exceed d~_eff = {d_tilde:g}")
    target = np.eye(d) + d_eff / (spec.m - d_tilde) * UtU

    blocks = [range(i, min(i + chunk, trials)) for i in range(0, trials, chunk)]
    work = [(U, R, spec, profile, d_eff, seed, blk) for blk in blocks]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _chunk(*a), work))
    else:
        parts = [_chunk(*a) for a in work]
    # fixed-order reduction keeps results independent of thread scheduling
    s1 = np.zeros((d, d))
    s2 = np.zeros((d, d))
    t1 = t2 = 0.0
    failures = 0
    for p in parts:
        s1 += p[0]
        s2 += p[1]
        t1 += p[2]
        t2 += p[3]
        failures += p[4]

    if failures > MAX_FAILURE_FRACTION * trials:
        raise MomentLabError(
            f"{failures} of {trials} sketched matrices were not invertible; increase m"
        )
    kept = trials - failures
    meanQ = s1 / kept
    meanQ2 = s2 / kept
    meanQ = 0.5 * (meanQ + meanQ.T)
    meanQ2 = 0.5 * (meanQ2 + meanQ2.T)
    mean_tr = t1 / kept
    var_tr = max(t2 / kept - mean_tr**2, 0.0)
    return MomentEstimate(
        meanQ=meanQ,
        meanQ2=meanQ2,
        trials=trials,
        failures=failures,
        devFirst=_spectral(meanQ - np.eye(d)),
        devSecond=_spectral(meanQ2 - target),
        target=target,
        traceQ2_se=math.sqrt(var_tr / kept),
    )
