"""Dense symmetric-matrix helpers.

Everything here works on plain ``numpy.ndarray`` values. The validation
helpers (:func:`check_matrix`, :func:`check_symmetric`) play the role the
``check_array`` family plays in scikit-learn: they coerce, verify and
return a float64 copy, raising ``ValueError`` on bad input.

Eigenvalues are computed with a cyclic Jacobi iteration rather than LAPACK
so that verdicts produced by the SDP solver (which uses LAPACK internally)
can be re-checked by an independent code path.
"""

from __future__ import annotations

import numpy as np

SYMMETRY_RTOL = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def check_matrix(A, name: str = "matrix", square: bool = False) -> np.ndarray:
    """Return ``A`` as a finite 2-D float64 array or raise ``ValueError``."""
    arr = np.array(A, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    if square and arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def symmetrize(A) -> np.ndarray:
    arr = np.asarray(A, dtype=float)
    return 0.5 * (arr + arr.T)


def check_symmetric(S, name: str = "matrix") -> np.ndarray:
    """Validate a (numerically) symmetric matrix and return its symmetric part.

    The asymmetry allowed before rejection is ``1e-12 * (1 + max|S|)``;
    anything within that is absorbed by ``(S + S.T) / 2``.
    """
    arr = check_matrix(S, name, square=True)
    scale = 1.0 + np.max(np.abs(arr))
    asym = np.max(np.abs(arr - arr.T))
    if asym > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric (max asymmetry {asym:.3e})")
    return symmetrize(arr)


def elementwise_abs(A) -> np.ndarray:
    """Entrywise absolute value of a matrix or vector (the bar operator)."""
    arr = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains NaN or infinite entries")
    return np.abs(arr)


def jacobi_eigenvalues(S, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.

    Sweeps continue until the off-diagonal Frobenius norm drops below
    ``tol * (1 + ||S||_F)``.
    """
    a = check_symmetric(S).copy()
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    threshold = tol * (1.0 + np.linalg.norm(a))
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                diff = a[q, q] - a[p, p]
                if apq == 0.0 or abs(apq) < 1e-300:
                    continue
                if abs(apq) < 1e-100 * abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p and q: a <- J^T a J
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.sort(a.diagonal())


def min_eigenvalue(S) -> float:
    return float(jacobi_eigenvalues(S)[0])


def max_eigenvalue(S) -> float:
    return float(jacobi_eigenvalues(S)[-1])


def is_definite(S, sign: str = "positive", margin: float = 0.0) -> bool:
    """True iff ``lambda_min(S) >= margin`` (positive) or ``lambda_max(S) <= -margin`` (negative)."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if sign == "positive":
        return min_eigenvalue(S) >= margin
    if sign == "negative":
        return max_eigenvalue(S) <= -margin
    raise ValueError(f"sign must be 'positive' or 'negative', got {sign!r}")
