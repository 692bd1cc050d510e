"""Synthetic data, random cosine features and matrix files.

Matrix files are either plain CSV of reals or the binary ``NLMX`` layout:
4-byte magic, rows and cols as little-endian uint64, then row-major
little-endian float64 entries.
"""

import struct
from pathlib import Path

import numpy as np

from ..problem import as_dense_matrix
from ..rng import as_generator

MAGIC = b"NLMX"
_HEADER = struct.Struct("<4sQQ")


def coherent_covariance(d):
    idx = np.arange(d)
    return 2.0 * 0.5 ** np.abs(idx[:, None] - idx[None, :])


def gen_coherent(n, d, seed=0):
    """High-coherence rows a_i = g_i / sqrt(z_i), g_i ~ N(0, Sigma),
    z_i ~ Gamma(shape 1/2, scale 2), Sigma_ij = 2 * 0.5^|i-j|."""
    if d < 2 or n < d:
        raise ValueError(f"need n >= d >= 2, got n={n}, d={d}")
    rng = as_generator(seed)
    L = np.linalg.cholesky(coherent_covariance(d))
    g = rng.standard_normal((n, d)) @ L.T
    z = rng.gamma(shape=0.5, scale=2.0, size=n)
    return g / np.sqrt(z)[:, None]


def cosine_features(X, d, gamma, seed=0):
    """Random Fourier features sqrt(2/d) cos(W x + u) approximating the
    Gaussian kernel exp(-gamma ||x - y||^2)."""
    if gamma <= 0:
        raise ValueError("bandwidth gamma must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rng = as_generator(seed)
    W = rng.normal(scale=np.sqrt(2.0 * gamma), size=(d, X.shape[1]))
    u = rng.uniform(0.0, 2.0 * np.pi, size=d)
    return np.sqrt(2.0 / d) * np.cos(X @ W.T + u)


def synthetic_problem(kind, n, d, seed=0, noise=1.0):
    """Design matrix and targets for a synthetic instance.

    Least squares targets are A x0 + noise; logistic labels are the signs
    of a noisy linear score.
    """
    rng = as_generator(seed)
    A = gen_coherent(n, d, seed=rng)
    x0 = rng.standard_normal(d) / np.sqrt(d)
    score = A @ x0 + noise * rng.standard_normal(n)
    if kind.startswith("logistic"):
        return A, np.where(score >= 0, 1.0, -1.0)
    return A, score


def write_matrix(path, A, fmt=None):
    path = Path(path)
    A = as_dense_matrix(A)
    fmt = fmt or ("csv" if path.suffix.lower() in (".csv", ".txt") else "nlmx")
    if fmt == "csv":
        with path.open("w") as fh:
            for row in A:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif fmt == "nlmx":
        with path.open("wb") as fh:
            fh.write(_HEADER.pack(MAGIC, A.shape[0], A.shape[1]))
            fh.write(A.astype("<f8").tobytes(order="C"))
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def read_matrix(path):
    """Read an ``NLMX`` binary or a CSV matrix (detected from the magic bytes)."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(_HEADER.size)
        if head[:4] == MAGIC:
            if len(head) < _HEADER.size:
                raise ValueError(f"{path}: truncated NLMX header")
            _, rows, cols = _HEADER.unpack(head)
            data = np.frombuffer(fh.read(), dtype="<f8")
            if data.size != rows * cols:
                raise ValueError(f"{path}: expected {rows * cols} entries, found {data.size}")
            return data.reshape(rows, cols).astype(np.float64)
    A = np.loadtxt(path, delimiter=",", ndmin=2)
    return as_dense_matrix(A)
