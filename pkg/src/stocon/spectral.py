"""Jacobians, generalized Jacobians and their spectral bounds.

Matrices here are tiny (n is at most a handful), so closed forms are used
for n <= 2 and a cyclic Jacobi sweep for symmetric problems above that.
"""
from __future__ import annotations

import math

import numpy as np

from .core import NonFiniteError


class SingularMetricError(np.linalg.LinAlgError):
    pass


COND_LIMIT = 1e12


def jacobian_fd(f, x, t, xi, eps: float | None = None) -> np.ndarray:
    """Central-difference Jacobian of ``f(x, t, xi)`` with respect to ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    if eps is None:
        eps = 1e-6 * max(1.0, float(np.linalg.norm(x)))
    if not eps > 0:
        raise ValueError("eps must be positive")
    cols = []
    for k in range(n):
        step = np.zeros(n)
        step[k] = eps
        with np.errstate(all="ignore"):
            fp = np.asarray(f(x + step, t, xi), dtype=float).reshape(-1)
            fm = np.asarray(f(x - step, t, xi), dtype=float).reshape(-1)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteError(f"non-finite map value near x={x} (column {k})")
        cols.append((fp - fm) / (2.0 * eps))
    return np.column_stack(cols)


def _adjugate_inverse(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    if n == 1:
        return np.array([[1.0 / a[0, 0]]])
    if n == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
    cof = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != i]
            c = [k for k in range(3) if k != j]
            minor = a[r[0], c[0]] * a[r[1], c[1]] - a[r[0], c[1]] * a[r[1], c[0]]
            cof[i, j] = (-1) ** (i + j) * minor
    det = float(a[0] @ cof[0])
    return cof.T / det


def invert(a) -> np.ndarray:
    """Inverse of a small matrix; raises SingularMetricError if ill-conditioned."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("matrix has non-finite entries")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMetricError(f"matrix is singular to working precision (cond={cond:.3g})")
    if a.shape[0] <= 3:
        return _adjugate_inverse(a)
    return np.linalg.inv(a)


def generalized_jacobian_discrete(jac, theta_i, theta_next) -> np.ndarray:
    """F = Theta_{i+1} J Theta_i^{-1}."""
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    return np.atleast_2d(theta_next) @ jac @ invert(theta_i)


def generalized_jacobian_continuous(jac, theta, theta_dot) -> np.ndarray:
    """F = (dTheta/dt + Theta J) Theta^{-1}."""
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    return (np.atleast_2d(theta_dot) + theta @ jac) @ invert(theta)


def _sym2_max(a: float, b: float, d: float) -> float:
    # largest eigenvalue of [[a, b], [b, d]]
    mid = 0.5 * (a + d)
    rad = math.hypot(0.5 * (a - d), b)
    return mid + rad


def jacobi_eigenvalues(s: np.ndarray, tol: float = 1e-15, max_sweeps: int = 64) -> np.ndarray:
    """Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(s, dtype=float)
    n = a.shape[0]
    scale = float(np.abs(a).max()) if a.size else 0.0
    if scale == 0.0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.tril(a, -1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                g = 100.0 * abs(apq)
                if abs(a[p, p]) + g == abs(a[p, p]) and abs(a[q, q]) + g == abs(a[q, q]):
                    # negligible next to both diagonal entries
                    a[p, q] = a[q, p] = 0.0
                    continue
                diff = float(a[q, q] - a[p, p])
                if abs(diff) > 1e150 * abs(2.0 * apq):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = sn
                rot[q, p] = -sn
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def lambda_max_symmetric(F) -> float:
    """Largest eigenvalue of the symmetric part (F + F^T)/2."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = F.shape[0]
    if n == 1:
        return float(F[0, 0])
    if n == 2:
        return _sym2_max(F[0, 0], 0.5 * (F[0, 1] + F[1, 0]), F[1, 1])
    return float(jacobi_eigenvalues(0.5 * (F + F.T))[-1])


def largest_singular_value(F) -> float:
    """sigma_max(F) = sqrt(lambda_max(F^T F))."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = F.shape[0]
    if n == 1 and F.shape[1] == 1:
        return abs(float(F[0, 0]))
    g = F.T @ F
    if g.shape[0] == 2:
        lam = _sym2_max(g[0, 0], g[0, 1], g[1, 1])
    else:
        lam = float(jacobi_eigenvalues(g)[-1])
    return math.sqrt(max(lam, 0.0))


def spectral_radius_symmetric(S) -> float:
    return float(np.max(np.abs(jacobi_eigenvalues(np.atleast_2d(S)))))
