"""Dense matrix kernels shared by every training subproblem.

All functions are pure and operate on float64 ndarrays. Least-squares
solves go through LAPACK's SVD-based ``lstsq`` (never through explicitly
inverted normal equations, which are reserved for test oracles), so they
stay usable on the near-singular Gram matrices that natural image patches
produce.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatch, NonFiniteInput

# Counts invocations of iterative per-sample solvers (e.g. the benchmark's
# coordinate-descent sparse coder). The classification path must never
# touch it; tests assert that.
_iterative_solver_calls = 0


def record_iterative_solve(n: int = 1) -> None:
    """Register n iterative-solver invocations with the instrumentation counter."""
    global _iterative_solver_calls
    _iterative_solver_calls += n


def iterative_solver_calls() -> int:
    """Current value of the iterative-solver instrumentation counter."""
    return _iterative_solver_calls


def reset_iterative_solver_calls() -> None:
    """Zero the iterative-solver instrumentation counter."""
    global _iterative_solver_calls
    _iterative_solver_calls = 0


def require_finite(arr: np.ndarray, name: str = "input") -> np.ndarray:
    """Return arr as a float64 ndarray, raising NonFiniteInput on NaN/Inf."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size and not np.isfinite(arr).all():
        raise NonFiniteInput(f"{name} contains NaN or Inf entries")
    return arr


def solve_lsq_left(G: np.ndarray, H: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Minimize ||G X - H||_F^2 + ridge * ||X||_F^2 over X.

    Parameters
    ----------
    G : ndarray, shape (p, q)
    H : ndarray, shape (p, n)
    ridge : float
        Nonnegative Tikhonov weight. With ridge = 0 and rank-deficient G the
        minimum-Frobenius-norm minimizer is returned.

    Returns
    -------
    X : ndarray, shape (q, n)
    """
    G = require_finite(G, "G")
    H = require_finite(H, "H")
    if G.ndim != 2 or H.ndim != 2:
        raise DimensionMismatch("G and H must be 2-D")
    if G.shape[0] != H.shape[0]:
        raise DimensionMismatch(
            f"row counts differ: G has {G.shape[0]}, H has {H.shape[0]}"
        )
    if not np.isfinite(ridge) or ridge < 0:
        raise NonFiniteInput("ridge must be a finite nonnegative scalar")
    if ridge > 0:
        # Augmented orthogonal formulation; keeps conditioning at sqrt of the
        # normal-equation condition number.
        q = G.shape[1]
        G = np.vstack([G, np.sqrt(ridge) * np.eye(q)])
        H = np.vstack([H, np.zeros((q, H.shape[1]))])
    X, *_ = np.linalg.lstsq(G, H, rcond=None)
    return X


def solve_lsq_right(G: np.ndarray, H: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Minimize ||A G - H||_F^2 + ridge * ||A||_F^2 over A.

    G has shape (q, n), H has shape (p, n); the result A has shape (p, q).
    Equivalent to :func:`solve_lsq_left` on transposed inputs.
    """
    G = require_finite(G, "G")
    H = require_finite(H, "H")
    if G.ndim != 2 or H.ndim != 2:
        raise DimensionMismatch("G and H must be 2-D")
    if G.shape[1] != H.shape[1]:
        raise DimensionMismatch(
            f"column counts differ: G has {G.shape[1]}, H has {H.shape[1]}"
        )
    return solve_lsq_left(G.T, H.T, ridge).T


def singular_value_threshold(M: np.ndarray, tau: float) -> np.ndarray:
    """Soft-shrink the singular values of M by tau.

    Returns U softshrink(S, tau) V^T for the SVD M = U S V^T, i.e. the unique
    minimizer of (1/2)||D - M||_F^2 + tau ||D||_*.
    """
    M = require_finite(M, "M")
    if not np.isfinite(tau) or tau <= 0:
        raise NonFiniteInput("tau must be a finite positive scalar")
    if M.size == 0:
        return M.copy()
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (U * s) @ Vt


def nuclear_norm(M: np.ndarray) -> float:
    """Sum of singular values of M."""
    M = require_finite(M, "M")
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False).sum())


def pseudoinverse(M: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse of M.

    Singular values below 1e-12 * max(rows, cols) * s_max are treated as zero.
    """
    M = require_finite(M, "M")
    if M.size == 0:
        return M.T.copy()
    return np.linalg.pinv(M, rcond=1e-12 * max(M.shape))


def project_columns_unit(D: np.ndarray) -> np.ndarray:
    """Euclidean projection of each column onto the unit ball.

    Columns with norm > 1 are rescaled to norm 1; all others (including zero
    columns) are returned unchanged.
    """
    D = require_finite(D, "D")
    if D.size == 0:
        return D.copy()
    norms = np.linalg.norm(D, axis=0)
    return D / np.maximum(norms, 1.0)
