"""Small dense solves with explicit singularity detection.

Moment matrices here are tiny (K rarely above 20), so we factor them with a
diagonally pivoted Cholesky sweep purely to measure the pivots, then hand the
actual solve to LAPACK.  Singularity is declared when the smallest pivot
falls below ``PIVOT_RTOL`` times the largest; we raise instead of silently
projecting, because a pseudo-inverse would change the estimand.
"""
from __future__ import annotations

import numpy as np

from .exceptions import HetfxError, RankDeficiencyError

PIVOT_RTOL = 1e-10


def symmetric_pivots(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pivots of a symmetric matrix under diagonal-pivoted elimination.

    Returns ``(pivots, perm)``: the elimination pivots in pivot order and the
    original column index chosen at each step.  For a positive definite input
    the pivots are the (positive) LDL^T diagonal; near-zero or negative
    pivots flag rank deficiency or indefiniteness.
    """
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    perm = np.arange(n)
    pivots = np.empty(n)
    for k in range(n):
        j = k + int(np.argmax(np.diag(a)[k:]))
        if j != k:
            a[[k, j], :] = a[[j, k], :]
            a[:, [k, j]] = a[:, [j, k]]
            perm[[k, j]] = perm[[j, k]]
        d = a[k, k]
        pivots[k] = d
        if d <= 0.0:
            # no positive pivot left; report the remaining diagonal as-is
            pivots[k:] = np.diag(a)[k:]
            break
        if k + 1 < n:
            col = a[k + 1 :, k]
            a[k + 1 :, k + 1 :] -= np.outer(col, col) / d
    return pivots, perm


def assert_invertible(
    a: np.ndarray,
    *,
    labels: tuple[str, ...] | None = None,
    what: str = "moment matrix",
    exc: type[HetfxError] = RankDeficiencyError,
) -> None:
    """Raise ``exc`` when a symmetric matrix is singular at the tolerance.

    The error message names the columns whose pivots failed (the dependent
    directions), which is what a caller needs to fix a rank-deficient design.
    """
    pivots, perm = symmetric_pivots(a)
    largest = float(pivots[0]) if pivots.size else 0.0
    bad = pivots < PIVOT_RTOL * max(largest, 0.0)
    if largest <= 0.0 or bad.any():
        failing = perm[np.flatnonzero(bad)] if largest > 0.0 else perm
        if labels is not None:
            names = ", ".join(labels[j] for j in failing)
        else:
            names = ", ".join(str(j) for j in failing)
        smallest = float(pivots.min())
        raise exc(
            f"{what} is singular at pivot tolerance {PIVOT_RTOL:g} "
            f"(smallest pivot {smallest:.3e}, largest {largest:.3e}); "
            f"offending column(s): {names}"
        )


def solve_symmetric(
    a: np.ndarray,
    b: np.ndarray,
    *,
    labels: tuple[str, ...] | None = None,
    what: str = "moment matrix",
    exc: type[HetfxError] = RankDeficiencyError,
) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric ``a``, raising ``exc`` when singular."""
    assert_invertible(a, labels=labels, what=what, exc=exc)
    return np.linalg.solve(a, b)


def inverse_symmetric(
    a: np.ndarray,
    *,
    labels: tuple[str, ...] | None = None,
    what: str = "moment matrix",
    exc: type[HetfxError] = RankDeficiencyError,
) -> np.ndarray:
    eye = np.eye(a.shape[0])
    return solve_symmetric(a, eye, labels=labels, what=what, exc=exc)


def solve_square(
    a: np.ndarray,
    b: np.ndarray,
    *,
    what: str = "block system",
    exc: type[HetfxError] = RankDeficiencyError,
) -> np.ndarray:
    """Solve a general square system, checking the LU pivots."""
    import scipy.linalg

    lu, _ = scipy.linalg.lu_factor(a, check_finite=False)
    diag = np.abs(np.diag(lu))
    largest = float(diag.max()) if diag.size else 0.0
    smallest = float(diag.min()) if diag.size else 0.0
    if largest == 0.0 or smallest < PIVOT_RTOL * largest:
        raise exc(
            f"{what} is singular at pivot tolerance {PIVOT_RTOL:g} "
            f"(smallest pivot {smallest:.3e}, largest {largest:.3e})"
        )
    return np.linalg.solve(a, b)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Force exact symmetry after a sandwich product."""
    return (a + a.T) / 2.0
