"""Dense linear-algebra and Gaussian helpers used by the GP, observer and MPC code."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite

#: Diagonal jitter ladder tried when a kernel matrix fails to factorize.
JITTER_LADDER = (1e-10, 1e-8, 1e-6)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular ``L`` with ``L @ L.T`` equal to the factorized matrix."""

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float array."""
    a = np.array(m, dtype=float, ndmin=2)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def cholesky(m) -> CholeskyFactor:
    """Cholesky factor of a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If any pivot is not strictly positive.
    """
    a = as_matrix(m)
    n, k = a.shape
    if n != k:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-12 * scale:
        raise ValueError("cholesky needs a symmetric matrix")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.diag(lower) > 0.0):
        raise NotPositiveDefinite("non-positive pivot")
    return CholeskyFactor(lower)


def cholesky_jittered(m, ladder=JITTER_LADDER) -> tuple[CholeskyFactor, float]:
    """Factorize ``m``, retrying with growing diagonal jitter.

    Returns the factor and the jitter that was finally added (0.0 if none).
    """
    a = as_matrix(m)
    try:
        return cholesky(a), 0.0
    except NotPositiveDefinite:
        pass
    eye = np.eye(a.shape[0])
    for jitter in ladder:
        try:
            return cholesky(a + jitter * eye), jitter
        except NotPositiveDefinite:
            continue
    raise NotPositiveDefinite(f"matrix not positive definite even with jitter {ladder[-1]:g}")


def cholesky_solve(f: CholeskyFactor, b) -> np.ndarray:
    """Solve ``(L L^T) x = b`` for a vector or a stack of column vectors."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.dim:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, factor has dim {f.dim}")
    y = solve_triangular(f.lower, b, lower=True, check_finite=False)
    return solve_triangular(f.lower.T, y, lower=False, check_finite=False)


def dare_steady_kalman(a, c, w, v, tol: float = 1e-10, max_iter: int = 10000) -> np.ndarray:
    """Steady-state predictor gain of a Kalman filter.

    Iterates the filter Riccati recursion

        P <- A P A^T - A P C^T (C P C^T + V)^-1 C P A^T + W

    to its fixed point and returns ``L = A P C^T (C P C^T + V)^-1``.
    The observer ``z+ = A z + B u + L (y - C z)`` built from this gain is
    stable whenever ``(A, C)`` is detectable.

    Raises
    ------
    NoConvergence
        If ``||dP||_F`` stays above ``tol`` after ``max_iter`` steps or the
        iteration diverges.
    """
    a = as_matrix(a, "a")
    c = as_matrix(c, "c")
    w = as_matrix(w, "w")
    v = as_matrix(v, "v")
    n = a.shape[0]
    p_out = c.shape[0]
    if a.shape != (n, n) or c.shape[1] != n or w.shape != (n, n) or v.shape != (p_out, p_out):
        raise DimensionMismatch(
            f"incompatible shapes a{a.shape} c{c.shape} w{w.shape} v{v.shape}"
        )

    p = w.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            s = c @ p @ c.T + v
            apc = a @ p @ c.T
            p_next = a @ p @ a.T - apc @ np.linalg.solve(s, apc.T) + w
            p_next = 0.5 * (p_next + p_next.T)
            if not np.all(np.isfinite(p_next)):
                raise NoConvergence("Riccati iteration diverged")
            delta = np.linalg.norm(p_next - p)
            p = p_next
            if delta < tol:
                break
        else:
            raise NoConvergence(f"Riccati iteration did not converge in {max_iter} steps")

    s = c @ p @ c.T + v
    return np.linalg.solve(s.T, (a @ p @ c.T).T).T


def norm_cdf(x):
    """Standard normal CDF (scalar or array)."""
    return ndtr(x)


def norm_pdf(x):
    """Standard normal density (scalar or array)."""
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out
