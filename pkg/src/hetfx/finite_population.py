"""Finite-population primitives.

Covariance operators over unit-level vectors, the vector difference-in-means
estimator with its conservative covariance, and exact quantile-matching
integrals for discrete distributions.  Everything here is a pure function of
its inputs and invariant to unit order.

Divisor conventions (each caller documents its own): the covariance operator
uses ``n - 1``; population effect variances elsewhere in the library use
``n``.
"""
from __future__ import annotations

import numpy as np

from .exceptions import HetfxError, InsufficientDataError
from .linalg import symmetrize
from .validation import as_float_matrix, check_treatment


def covariance_matrix(rows) -> np.ndarray:
    """Covariance matrix of n unit-level vectors, divisor ``n - 1``.

    Parameters
    ----------
    rows : array-like, shape (n, K)
        One vector per unit.

    Returns
    -------
    ndarray, shape (K, K)
        Symmetric positive semidefinite matrix.
    """
    a = as_float_matrix(rows, "sample")
    n = a.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 vectors, got {n}")
    centered = a - a.mean(axis=0)
    return symmetrize(centered.T @ centered / (n - 1))


def arm_covariance(rows, treatment, arm: int) -> np.ndarray:
    """Sample covariance of the unit vectors within one treatment arm.

    Divisor is ``n_arm - 1``; the arm must contain at least two units.
    """
    a = as_float_matrix(rows, "sample")
    t, _, _ = check_treatment(treatment, a.shape[0])
    if arm not in (0, 1):
        raise HetfxError(f"arm must be 0 or 1, got {arm}")
    subset = a[t == arm]
    if subset.shape[0] < 2:
        raise InsufficientDataError(
            f"arm {arm} has {subset.shape[0]} units; need at least 2"
        )
    return covariance_matrix(subset)


def difference_in_means(rows, treatment) -> tuple[np.ndarray, np.ndarray]:
    """Vector difference in means with its conservative covariance estimate.

    Returns
    -------
    estimate : ndarray, shape (K,)
        Mean of the treated vectors minus mean of the control vectors.
    cov : ndarray, shape (K, K)
        ``S1/n1 + S0/n0`` built from the per-arm sample covariances.  The
        unidentifiable effect-dispersion term is omitted, which makes the
        estimate conservative (its expectation dominates the truth in the
        positive semidefinite order).
    """
    a = as_float_matrix(rows, "sample")
    t, n1, n0 = check_treatment(treatment, a.shape[0])
    if n1 < 2 or n0 < 2:
        raise InsufficientDataError(
            f"both arms need at least 2 units (n1={n1}, n0={n0})"
        )
    treated = a[t == 1]
    control = a[t == 0]
    estimate = treated.mean(axis=0) - control.mean(axis=0)
    cov = covariance_matrix(treated) / n1 + covariance_matrix(control) / n0
    return estimate, symmetrize(cov)


def _step_quantile_integral(
    support1: np.ndarray,
    levels1: np.ndarray,
    support0: np.ndarray,
    levels0: np.ndarray,
    antithetic: bool,
) -> float:
    """Exact integral of a squared quantile difference over (0, 1].

    ``support``/``levels`` describe a step CDF: ``F(support[i]) = levels[i]``
    with ``levels`` increasing to 1.  The integrand is piecewise constant, so
    integrating over the merged breakpoint grid and evaluating at segment
    midpoints is exact.  With ``antithetic`` the second quantile function is
    evaluated at ``1 - u``, whose jump locations are the reflected levels;
    those reflections are added to the grid.
    """
    pieces = [levels1]
    if antithetic:
        pieces.append(1.0 - levels0)
    else:
        pieces.append(levels0)
    grid = np.union1d(np.concatenate(pieces), [0.0, 1.0])
    grid = grid[(grid > 0.0) & (grid <= 1.0)]
    left = np.concatenate([[0.0], grid[:-1]])
    widths = grid - left
    mids = (left + grid) / 2.0
    q1 = support1[np.searchsorted(levels1, mids, side="left")]
    u0 = (1.0 - mids) if antithetic else mids
    q0 = support0[np.searchsorted(levels0, u0, side="left")]
    return float(np.sum(widths * (q1 - q0) ** 2))


def quantile_integral(sample1, sample0, mode: str = "matched") -> float:
    """Squared quantile-coupling integral between two empirical distributions.

    Each sample is treated as a discrete uniform distribution.  ``matched``
    pairs equal quantile levels (the comonotone coupling, yielding the sharp
    lower bound for the variance of a mean-zero difference); ``antimatched``
    pairs opposite levels (the antitone coupling, yielding the sharp upper
    bound).  Integration is exact over the merged ``{i/n1} U {j/n0}``
    breakpoint grid; ties are handled by a stable sort.
    """
    if mode not in ("matched", "antimatched"):
        raise HetfxError(f"mode must be 'matched' or 'antimatched', got {mode!r}")
    s1 = np.sort(np.asarray(sample1, dtype=float), kind="stable")
    s0 = np.sort(np.asarray(sample0, dtype=float), kind="stable")
    if s1.size == 0 or s0.size == 0:
        raise InsufficientDataError("both samples must be non-empty")
    if not (np.isfinite(s1).all() and np.isfinite(s0).all()):
        raise HetfxError("samples must be finite")
    levels1 = np.arange(1, s1.size + 1) / s1.size
    levels0 = np.arange(1, s0.size + 1) / s0.size
    return _step_quantile_integral(s1, levels1, s0, levels0, mode == "antimatched")
