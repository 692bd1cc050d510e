"""Sketching operators: dense Gaussian/Rademacher, LESS, LESS-uniform,
row sampling (uniform or leverage-score) and SRHT.

Sparsified sketches are stored as CSR matrices built from the sampled
(row, column, value) triples; applying one to an n x d matrix costs one
multiply-add per stored nonzero and column, never a dense m x n product.
"""

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._hadamard import fwht, fwht_madds, next_pow2
from .rng import as_generator

KINDS = ("gaussian", "rademacher", "less", "less-uniform", "rrs", "rrs-lev", "srht")
SPARSIFIED = ("less", "less-uniform")
NEEDS_PROFILE = ("less", "rrs-lev")
SCALINGS = ("theory", "unbiased", "practical")


class SketchConfigError(ValueError):
    pass


# ---------------------------------------------------------------- counters

class MaddCounter:
    def __init__(self):
        self.total = 0
        self.calls = 0


_counters = []
_counter_lock = threading.Lock()


@contextmanager
def count_madds():
    """Count multiply-adds spent in :func:`apply_sketch` inside the block."""
    counter = MaddCounter()
    with _counter_lock:
        _counters.append(counter)
    try:
        yield counter
    finally:
        with _counter_lock:
            _counters.remove(counter)


def _record(madds):
    if _counters:
        with _counter_lock:
            for c in _counters:
                c.total += int(madds)
                c.calls += 1


# ---------------------------------------------------------------- sparsifier

def _check_distribution(p, n=None):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise SketchConfigError("sampling distribution must be a non-empty vector")
    if n is not None and p.size != n:
        raise SketchConfigError(f"sampling distribution has {p.size} entries, expected {n}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise SketchConfigError("sampling probabilities must be finite and non-negative")
    total = p.sum()
    if abs(total - 1.0) > 1e-8:
        raise SketchConfigError(f"sampling probabilities sum to {total}, not 1")
    return p / total


@dataclass(frozen=True, eq=False)
class Sparsifier:
    """A (p, s)-sparsifier: s i.i.d. draws t_1..t_s from p, merged into
    support indices with multiplicities b_i and entries sqrt(b_i / (s p_i))."""

    n: int
    s: int
    indices: np.ndarray
    support: np.ndarray
    counts: np.ndarray
    values: np.ndarray

    def dense(self):
        xi = np.zeros(self.n)
        xi[self.support] = self.values
        return xi


def draw_sparsifier(p, s, rng=None):
    p = _check_distribution(p)
    s = int(s)
    if s < 1:
        raise SketchConfigError("sparsity s must be at least 1")
    rng = as_generator(rng)
    t = rng.choice(p.size, size=s, p=p)
    support, counts = np.unique(t, return_counts=True)
    values = np.sqrt(counts / (s * p[support]))
    return Sparsifier(p.size, s, t, support, counts, values)


# ---------------------------------------------------------------- specs

@dataclass(frozen=True)
class SketchSpec:
    """Declarative sketch description.

    ``s`` applies to the sparsified kinds only; ``p`` is ``"uniform"``, an
    explicit distribution over rows, or ``None`` (kind default: leverage
    scores for ``less``/``rrs-lev``, uniform otherwise).
    """

    kind: str
    m: int
    s: int | None = None
    p: object = None
    scaling: str = "theory"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SketchConfigError(f"unknown sketch kind {self.kind!r}")
        if self.scaling not in SCALINGS:
            raise SketchConfigError(f"unknown scaling {self.scaling!r}")
        if int(self.m) < 1:
            raise SketchConfigError("sketch size m must be at least 1")
        if self.s is not None and int(self.s) < 1:
            raise SketchConfigError("sparsity s must be at least 1")


def scale_constant(scaling, m, d_eff):
    """Row scale c: 1/sqrt(m - d_eff) (theory), 1/sqrt(m - d_eff - 1)
    (unbiased Gaussian), or 1/sqrt(m) (practical)."""
    if scaling == "practical":
        return 1.0 / math.sqrt(m)
    shift = d_eff + (1.0 if scaling == "unbiased" else 0.0)
    if m <= shift:
        raise SketchConfigError(f"{scaling} scaling needs m > {shift:g}, got m = {m}")
    return 1.0 / math.sqrt(m - shift)


def theory_sparsity(profile, n):
    """Row density tau * d_eff under which LESS-uniform matches the theory."""
    return int(min(n, math.ceil(profile.coherence * profile.dEff)))


# ---------------------------------------------------------------- operators

@dataclass(frozen=True, eq=False)
class SketchOperator:
    kind: str
    m: int
    n: int
    scale: float
    dense: np.ndarray | None = None
    sparse: sp.csr_matrix | None = None
    srht_signs: np.ndarray | None = None
    srht_rows: np.ndarray | None = None
    s: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def nnz(self):
        if self.sparse is not None:
            return int(self.sparse.nnz)
        return self.m * self.n

    def madds(self, d):
        if self.sparse is not None:
            return self.sparse.nnz * d
        if self.dense is not None:
            return self.m * self.n * d
        return fwht_madds(self.srht_signs.size, d)

    def to_dense(self):
        if self.dense is not None:
            return self.dense.copy()
        if self.sparse is not None:
            return self.sparse.toarray()
        return apply_sketch(self, np.eye(self.n))


def _sparsified_rows(rng, m, n, s, p, signed):
    """CSR matrix whose rows are (signed) (p, s)-sparsifiers, unscaled."""
    if p is None:
        t = rng.integers(0, n, size=(m, s))
        probs = None
    else:
        t = rng.choice(n, size=(m, s), p=p)
        probs = p
    keys = (np.arange(m, dtype=np.int64)[:, None] * n + t).ravel()
    keys, counts = np.unique(keys, return_counts=True)
    rows = keys // n
    cols = keys % n
    if probs is None:
        vals = np.sqrt(counts * (n / s))
    else:
        vals = np.sqrt(counts / (s * probs[cols]))
    if signed:
        vals = vals * rng.choice(np.array([-1.0, 1.0]), size=vals.size)
    indptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=m), out=indptr[1:])
    return sp.csr_matrix((vals, cols, indptr), shape=(m, n))


def _resolve_p(spec, n, profile):
    if isinstance(spec.p, str):
        if spec.p != "uniform":
            raise SketchConfigError(f"unknown distribution {spec.p!r}")
        return None
    if spec.p is not None:
        return _check_distribution(spec.p, n)
    if spec.kind in NEEDS_PROFILE:
        if profile is None:
            raise SketchConfigError(f"sketch kind {spec.kind!r} needs a leverage profile")
        if profile.n != n:
            raise SketchConfigError(f"leverage profile covers {profile.n} rows, expected {n}")
        return _check_distribution(profile.probabilities, n)
    return None


def build_sketch(spec, n, d=None, profile=None, d_eff=None, rng=None):
    """Draw an m x n operator for ``spec``.

    ``d_eff`` (for the theory/unbiased scale) defaults to ``profile.dEff``,
    then to ``d``. ``d`` is also the default LESS-uniform row density.
    """
    n = int(n)
    m = int(spec.m)
    if d_eff is None:
        d_eff = profile.dEff if profile is not None else d
    if d_eff is None and spec.scaling != "practical":
        raise SketchConfigError("theory scaling needs d, d_eff or a leverage profile")
    c = scale_constant(spec.scaling, m, d_eff)
    rng = as_generator(rng, spec.seed)
    kind = spec.kind

    if kind == "gaussian":
        return SketchOperator(kind, m, n, c, dense=c * rng.standard_normal((m, n)))
    if kind == "rademacher":
        signs = rng.choice(np.array([-c, c]), size=(m, n))
        return SketchOperator(kind, m, n, c, dense=signs)

    if kind in SPARSIFIED:
        p = _resolve_p(spec, n, profile)
        if spec.s is not None:
            s = int(spec.s)
        elif kind == "less":
            s = max(1, round(d_eff))
        else:
            if d is None:
                raise SketchConfigError("less-uniform needs s or d")
            s = int(d)
        if s > n:
            raise SketchConfigError(f"sparsity s = {s} exceeds n = {n}")
        S = _sparsified_rows(rng, m, n, s, p, signed=True)
        S.data *= c
        return SketchOperator(kind, m, n, c, sparse=S, s=s)

    if kind == "rrs":
        if m > n:
            raise SketchConfigError("uniform row sampling draws without replacement; needs m <= n")
        rows = np.sort(rng.choice(n, size=m, replace=False))
        vals = np.full(m, c * math.sqrt(n))
        S = sp.csr_matrix((vals, rows, np.arange(m + 1)), shape=(m, n))
        return SketchOperator(kind, m, n, c, sparse=S, s=1)

    if kind == "rrs-lev":
        p = _resolve_p(spec, n, profile)
        if p is None:
            p = np.full(n, 1.0 / n)
        rows = rng.choice(n, size=m, p=p)
        vals = c / np.sqrt(p[rows])
        S = sp.csr_matrix((vals, rows, np.arange(m + 1)), shape=(m, n))
        return SketchOperator(kind, m, n, c, sparse=S, s=1)

    # srht
    N = next_pow2(n)
    if m > N:
        raise SketchConfigError(f"SRHT samples without replacement; needs m <= {N}")
    signs = rng.choice(np.array([-1.0, 1.0]), size=N)
    rows = np.sort(rng.choice(N, size=m, replace=False))
    return SketchOperator(kind, m, n, c, srht_signs=signs, srht_rows=rows)


def apply_sketch(S, A):
    """Return S @ A (m x d)."""
    A = np.asarray(A, dtype=np.float64)
    vec = A.ndim == 1
    if vec:
        A = A[:, None]
    if A.shape[0] != S.n:
        raise ValueError(f"sketch has {S.n} columns, matrix has {A.shape[0]} rows")
    d = A.shape[1]
    if S.dense is not None:
        out = S.dense @ A
    elif S.sparse is not None:
        out = np.asarray(S.sparse @ A)
    else:
        N = S.srht_signs.size
        padded = np.zeros((N, d))
        padded[: S.n] = A
        padded *= S.srht_signs[:, None]
        # orthonormal H rows have entries +-1/sqrt(N); rows of S are c * (+-1)
        out = (S.scale * math.sqrt(N)) * fwht(padded)[S.srht_rows]
    _record(S.madds(d))
    return out[:, 0] if vec else out


def sketched_hessian(view, spec, profile=None, rng=None, d_eff=None, return_operator=False):
    """(SA)^T (SA) + Hess g for A = A_f0(x), symmetrized."""
    A = view.matrix
    n, d = A.shape
    S = build_sketch(spec, n, d=d, profile=profile, d_eff=d_eff, rng=rng)
    SA = apply_sketch(S, A)
    H = SA.T @ SA + view.regHessian
    H = 0.5 * (H + H.T)
    return (H, S) if return_operator else H
