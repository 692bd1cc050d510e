"""Regularized leverage scores, effective dimensions and coherence.

For A (n x d) and psd C (d x d), with H = A^T A + C and U = A H^{-1/2}:

    l_i      = ||e_i^T U||^2
    d_eff    = sum_i l_i = tr(U^T U)
    d~_eff   = tr((U^T U)^2)
    tau      = (n / d_eff) max_i l_i
"""

import math
from dataclasses import dataclass

import numpy as np

from ._hadamard import fwht, next_pow2
from .problem import as_dense_matrix
from .rng import as_generator


class SingularHessianError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class LeverageProfile:
    scores: np.ndarray
    dEff: float
    dEffTilde: float
    coherence: float
    exact: bool

    @property
    def n(self):
        return self.scores.shape[0]

    @property
    def probabilities(self):
        """Scores normalized to a sampling distribution over rows."""
        return self.scores / self.scores.sum()


def _as_reg(C, d):
    if C is None:
        return np.zeros((d, d))
    if np.isscalar(C):
        return float(C) * np.eye(d)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (d, d):
        raise ValueError(f"regularizer must be {d}x{d}, got {C.shape}")
    return 0.5 * (C + C.T)


def _inv_sqrt(H, rtol=1e-12):
    evals, V = np.linalg.eigh(H)
    top = max(evals[-1], 0.0)
    if top <= 0 or evals[0] <= rtol * top:
        raise SingularHessianError(
            f"A^T A + C is singular to working precision (eigenvalues {evals[0]:.3e} .. {top:.3e})"
        )
    return (V / np.sqrt(evals)) @ V.T


def effective_dims(singular_values, lam):
    """(d_eff, d~_eff) from the singular values of A when C = lam * I."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    s2 = np.asarray(singular_values, dtype=np.float64) ** 2
    if np.any(s2 < 0):
        raise ValueError("singular values must be non-negative")
    if lam == 0:
        ratios = (s2 > 0).astype(np.float64)
    else:
        ratios = s2 / (s2 + lam)
    return float(ratios.sum()), float((ratios**2).sum())


def exact_leverage(A, C=None):
    """Exact scores through an eigendecomposition of H = A^T A + C.

    ``C`` may be ``None`` (zero), a scalar (lam * I) or a d x d psd matrix.
    Raises :class:`SingularHessianError` when H is not invertible.
    """
    A = as_dense_matrix(A)
    n, d = A.shape
    H = A.T @ A + _as_reg(C, d)
    U = A @ _inv_sqrt(H)
    # clip float rounding so the [0, 1] and d~ <= d_eff bounds hold exactly
    scores = np.clip(np.einsum("ij,ij->i", U, U), 0.0, 1.0)
    sv = np.linalg.svd(U, compute_uv=False)
    d_eff = float(scores.sum())
    d_tilde = min(float(np.sum(sv**4)), d_eff)
    return LeverageProfile(
        scores=scores,
        dEff=d_eff,
        dEffTilde=d_tilde,
        coherence=float(n / d_eff * scores.max()),
        exact=True,
    )


def _row_rotation_sketch(B, m1, rng):
    """Randomized Hadamard rotation of the rows of B, then uniform row
    subsampling without replacement, scaled so that E[PiᵀPi] = I."""
    N0 = B.shape[0]
    N = next_pow2(N0)
    signs = rng.choice(np.array([-1.0, 1.0]), size=N0)
    padded = np.zeros((N, B.shape[1]))
    padded[:N0] = signs[:, None] * B
    rotated = fwht(padded)
    if m1 >= N0:
        return rotated
    rows = np.sort(rng.choice(N, size=m1, replace=False))
    return np.sqrt(N / m1) * rotated[rows]


def approx_leverage(A, C=None, oversample=8, jl_dim=None, seed=None):
    """Fast approximate regularized leverage scores.

    The regularizer is folded in by stacking C^{1/2} under A. The stacked
    matrix is row-sketched by a randomized Hadamard rotation down to
    ``oversample * d`` rows, its R factor gives an approximate whitening, and
    row norms of A R^{-1} are estimated with a ``jl_dim``-column Gaussian
    projection. When ``jl_dim >= d`` the projection cannot save work and the
    row norms of A R^{-1} are computed directly.

    The returned profile has ``exact=False``; ``dEff`` is the sum of the
    estimated scores and ``dEffTilde`` a bias-corrected estimate from the
    same projection.
    """
    A = as_dense_matrix(A)
    n, d = A.shape
    Creg = _as_reg(C, d)
    rng = as_generator(seed)
    if jl_dim is None:
        jl_dim = math.ceil(8 * math.log(n)) if n > 1 else d
    if np.any(Creg):
        evals, V = np.linalg.eigh(Creg)
        root = (V * np.sqrt(np.clip(evals, 0, None))) @ V.T
        B = np.vstack([A, root])
    else:
        B = A
    if oversample <= 0:
        raise ValueError("oversample must be positive")
    # with fewer rows than requested, rotate them all (exact whitening)
    m1 = min(math.ceil(oversample * d), B.shape[0])

    for attempt in range(2):
        SB = _row_rotation_sketch(B, m1, rng)
        R = np.linalg.qr(SB, mode="r")
        diag = np.abs(np.diag(R))
        if diag.min() > 1e-12 * diag.max():
            break
        m1 *= 2
    else:
        raise SingularHessianError("sketched factor is rank deficient even after doubling the sketch")

    if jl_dim >= d:
        W = np.linalg.solve(R.T, A.T).T
        scores = np.einsum("ij,ij->i", W, W)
        M = W.T @ W
        d_tilde = float(np.sum(M * M))
    else:
        G = rng.standard_normal((d, jl_dim)) / np.sqrt(jl_dim)
        W = A @ np.linalg.solve(R, G)
        scores = np.einsum("ij,ij->i", W, W)
        # E tr((GᵀMG)^2) = (1 + 1/k) tr(M^2) + tr(M)^2 / k for M = R^{-T} AᵀA R^{-1}
        M = W.T @ W
        k = jl_dim
        d_tilde = float((np.sum(M * M) - np.trace(M) ** 2 / k) / (1 + 1 / k))
    d_eff = float(scores.sum())
    d_tilde = min(max(d_tilde, d_eff**2 / d), d_eff)
    return LeverageProfile(
        scores=scores,
        dEff=d_eff,
        dEffTilde=d_tilde,
        coherence=float(n / d_eff * scores.max()),
        exact=False,
    )
