"""Small dense linear algebra and fixed-step ODE integration.

Everything here targets tiny systems (n <= ~6): a hand-rolled Cholesky with
an explicit pivot threshold, a cyclic Jacobi eigensolver for symmetric
matrices, and a classical RK4 step.  The routines are pure functions over
numpy arrays and are reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteDerivative, NonSymmetric, NotPositiveDefinite

# Pivot below this is treated as a non-PD matrix.  State dimensions are tiny,
# so an absolute threshold is adequate.
PIVOT_TOL = 1e-14

# Symmetry gate for sym_eig.
SYMMETRY_TOL = 1e-9

# Jacobi sweep stops when the off-diagonal Frobenius norm falls below this.
JACOBI_OFFDIAG_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass
class OdeState:
    """Integration state: time plus the stacked [q; qdot] vector."""

    t: float
    y: np.ndarray


def check_finite(a: np.ndarray, what: str = "array") -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteDerivative(f"{what} contains NaN/Inf")


def check_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> None:
    dev = np.max(np.abs(a - a.T)) if a.size else 0.0
    if dev > tol:
        raise NonSymmetric(f"matrix asymmetry {dev:.3e} exceeds {tol:.1e}")


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    Raises NotPositiveDefinite when a pivot drops to PIVOT_TOL or below.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise NonSymmetric(f"expected square matrix, got shape {a.shape}")
    check_symmetric(a, tol=1e-9)
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - np.dot(lower[j, :j], lower[j, :j])
        if pivot <= PIVOT_TOL:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at column {j}")
        ljj = np.sqrt(pivot)
        lower[j, j] = ljj
        if j + 1 < n:
            lower[j + 1 :, j] = (
                a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]
            ) / ljj
    return lower


def solve_cholesky(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b given the Cholesky factor L.

    b may be a vector or a matrix of stacked right-hand sides.
    """
    n = lower.shape[0]
    b = np.asarray(b, dtype=float)
    y = np.zeros_like(b)
    for i in range(n):
        y[i] = (b[i] - lower[i, :i] @ y[:i]) / lower[i, i]
    x = np.zeros_like(b)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - lower[i + 1 :, i] @ x[i + 1 :]) / lower[i, i]
    return x


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b for symmetric positive definite a."""
    return solve_cholesky(cholesky(a), np.asarray(b, dtype=float))


def sym_eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues descending, eigenvectors as columns) with
    a @ v[:, i] == w[i] * v[:, i].
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    check_symmetric(a)
    m = a.copy()
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(np.sum(np.square(m - np.diag(np.diag(m)))))
        if off < JACOBI_OFFDIAG_TOL:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if abs(apq) < 1e-300:
                    continue
                # Classical Jacobi rotation annihilating m[p, q].
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                m = rot.T @ m @ rot
                v = v @ rot
    w = np.diag(m).copy()
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def rk4_step(
    f: Callable[[float, np.ndarray], np.ndarray], s: OdeState, dt: float
) -> OdeState:
    """One classical Runge-Kutta step of size dt.

    Written with plain arithmetic so the same code differentiates cleanly
    when y carries autodiff boxes.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    t, y = s.t, s.y
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + (0.5 * dt) * k1)
    k3 = f(t + 0.5 * dt, y + (0.5 * dt) * k2)
    k4 = f(t + dt, y + dt * k3)
    for k in (k1, k2, k3, k4):
        arr = getattr(k, "raw_value", k)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteDerivative(f"non-finite RK4 stage at t={t}")
    y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return OdeState(t=t + dt, y=y_next)
