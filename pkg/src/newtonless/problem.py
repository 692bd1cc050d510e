"""Objectives f = f0 + g with Hessian square-root access.

Three objectives are supported:

* ``least-squares``        f(x) = 1/2 ||Ax - b||^2
* ``ridge-least-squares``  f(x) = 1/2 ||Ax - b||^2 + lam/2 ||x||^2
* ``logistic-l2``          f(x) = 1/n sum_i log(1 + exp(-b_i a_i^T x)) + lam/2 ||x||^2

For each, ``hessian_sqrt(x)`` returns the tall matrix A_f0(x) with
A_f0(x)^T A_f0(x) = Hess f0(x), and the (cheap) Hessian of the regularizer g.
Only the f0 part is ever sketched.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

KINDS = ("least-squares", "ridge-least-squares", "logistic-l2")
_ALIASES = {"ls": "least-squares", "ridge": "ridge-least-squares", "logistic": "logistic-l2"}

# keeps sqrt(w_i) defined when a logistic margin saturates
WEIGHT_FLOOR = 1e-300


class DimensionError(ValueError):
    pass


def as_dense_matrix(A, name="A"):
    """Validate and return a 2-D float64 C-contiguous array with finite entries."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


@dataclass(frozen=True)
class HessianSqrtView:
    """A_f0(x) together with the regularizer Hessian at the same point."""

    matrix: np.ndarray
    regHessian: np.ndarray

    @property
    def hessian(self):
        return self.matrix.T @ self.matrix + self.regHessian


@dataclass(frozen=True, eq=False)
class Objective:
    kind: str
    A: np.ndarray
    b: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        A = as_dense_matrix(self.A)
        b = np.asarray(self.b, dtype=np.float64).ravel()
        if b.shape[0] != A.shape[0]:
            raise DimensionError(f"targets have length {b.shape[0]}, expected {A.shape[0]}")
        lam = float(self.lam)
        if not lam >= 0:
            raise ValueError("regularization must be non-negative")
        if kind == "least-squares" and lam != 0:
            raise ValueError("plain least squares takes lam = 0; use ridge-least-squares")
        if kind == "ridge-least-squares" and lam == 0:
            raise ValueError("ridge-least-squares needs lam > 0")
        if kind == "logistic-l2":
            labels = set(np.unique(b).tolist())
            if labels <= {0.0, 1.0}:
                b = 2.0 * b - 1.0
            elif not labels <= {-1.0, 1.0}:
                raise ValueError("logistic targets must be in {-1, +1} (or {0, 1})")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lam", lam)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.A.shape[1]

    @property
    def is_quadratic(self):
        return self.kind != "logistic-l2"

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise DimensionError(f"x has shape {x.shape}, expected ({self.d},)")
        return x

    def value(self, x):
        x = self._check(x)
        reg = 0.5 * self.lam * (x @ x)
        if self.is_quadratic:
            r = self.A @ x - self.b
            return 0.5 * (r @ r) + reg
        margins = self.b * (self.A @ x)
        # log(1 + exp(-z)) = -log(sigmoid(z)), stable for large |z|
        return -np.mean(log_expit(margins)) + reg

    def gradient(self, x):
        x = self._check(x)
        if self.is_quadratic:
            return self.A.T @ (self.A @ x - self.b) + self.lam * x
        margins = self.b * (self.A @ x)
        coef = -self.b * expit(-margins) / self.n
        return self.A.T @ coef + self.lam * x

    def weights(self, x):
        """Per-row logistic curvature sigma(z)(1 - sigma(z))/n, floored."""
        x = self._check(x)
        margins = self.b * (self.A @ x)
        sig = expit(margins)
        return np.maximum(sig * expit(-margins) / self.n, WEIGHT_FLOOR)

    def hessian_sqrt(self, x):
        x = self._check(x)
        reg = self.lam * np.eye(self.d)
        if self.is_quadratic:
            return HessianSqrtView(self.A, reg)
        return HessianSqrtView(np.sqrt(self.weights(x))[:, None] * self.A, reg)

    def hessian(self, x):
        return self.hessian_sqrt(x).hessian

    def minimizer(self, tol=1e-12, max_iter=100):
        """High-precision reference optimum.

        Least squares (plain or ridge) is solved in closed form through an
        orthogonal factorization of the (stacked) data matrix. Logistic
        regression runs exact Newton until the gradient norm drops below
        ``tol``.
        """
        if self.is_quadratic:
            if self.lam > 0:
                A = np.vstack([self.A, np.sqrt(self.lam) * np.eye(self.d)])
                b = np.concatenate([self.b, np.zeros(self.d)])
            else:
                A, b = self.A, self.b
            return np.linalg.lstsq(A, b, rcond=None)[0]
        x = np.zeros(self.d)
        for _ in range(max_iter):
            g = self.gradient(x)
            if np.linalg.norm(g) <= tol:
                return x
            x = x - np.linalg.solve(self.hessian(x), g)
        g = self.gradient(x)
        if np.linalg.norm(g) > tol:
            raise RuntimeError(f"reference Newton solve stalled at gradient norm {np.linalg.norm(g):.3e}")
        return x

    def excess(self, x, x_star):
        """f(x) - f(x*). Exact quadratic identity for least squares."""
        if self.is_quadratic:
            e = np.asarray(x) - x_star
            r = self.A @ e
            return 0.5 * (r @ r + self.lam * (e @ e))
        return self.value(x) - self.value(x_star)
