"""Hypothesis tests for systematic treatment effect variation.

The omnibus Wald test rejects when the non-intercept coefficients jointly
differ from zero; the Fisher randomization test is exact under a sharp null
that pins every unit's missing potential outcome.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, islice

import numpy as np
import scipy.special

from .exceptions import (
    HetfxError,
    NothingToTestError,
)
from .linalg import solve_symmetric
from .validation import (
    add_intercept,
    as_float_matrix,
    as_float_vector,
    check_treatment,
)

STATISTICS = ("diff_means", "diff_medians", "ks")
EXHAUSTIVE_LIMIT = 10**6
_CHUNK = 512


@dataclass(frozen=True)
class TestResult:
    """Outcome of a single hypothesis test."""

    name: str
    statistic: float
    p_value: float
    alpha: float
    reject: bool
    reference: str
    df: int | None = None
    draws: int | None = None
    method: str | None = None


class ChiSquare:
    """Chi-square distribution handle.

    ``quantile`` and ``survival`` are mutually inverse (to well below 1e-8
    relative error) via the regularized incomplete gamma function.
    """

    def __init__(self, df: int):
        if df != int(df) or int(df) < 1:
            raise HetfxError(f"degrees of freedom must be a positive integer, got {df!r}")
        self.df = int(df)

    def cdf(self, x: float) -> float:
        if x < 0:
            raise HetfxError(f"chi-square cdf requires x >= 0, got {x}")
        return float(scipy.special.chdtr(self.df, x))

    def survival(self, x: float) -> float:
        if x < 0:
            raise HetfxError(f"chi-square survival requires x >= 0, got {x}")
        return float(scipy.special.chdtrc(self.df, x))

    def quantile(self, p: float) -> float:
        if not 0.0 < p < 1.0:
            raise HetfxError(f"quantile requires p in (0, 1), got {p}")
        return float(scipy.special.chdtri(self.df, 1.0 - p))


def chi_square(df: int) -> ChiSquare:
    return ChiSquare(df)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise HetfxError(f"alpha must be in [0, 1), got {alpha}")
    return alpha


def omnibus_test(estimate, alpha: float = 0.05) -> TestResult:
    """Wald chi-square test that all non-intercept coefficients are zero.

    Accepts any fitted estimate exposing ``beta`` and ``cov`` whose first
    coordinate is the intercept.  Degrees of freedom are the number of
    non-intercept coordinates.
    """
    alpha = _check_alpha(alpha)
    beta = np.asarray(estimate.beta, dtype=float)
    cov = np.asarray(estimate.cov, dtype=float)
    if beta.shape[0] < 2:
        raise NothingToTestError(
            "the effect model has only an intercept; nothing to test"
        )
    b1 = beta[1:]
    c11 = cov[1:, 1:]
    labels = tuple(getattr(estimate, "labels", ()) or ())[1:] or None
    statistic = float(b1 @ solve_symmetric(c11, b1, labels=labels, what="non-intercept covariance block"))
    statistic = max(statistic, 0.0)
    df = b1.shape[0]
    dist = ChiSquare(df)
    p_value = dist.survival(statistic)
    reject = statistic > dist.quantile(1.0 - alpha) if alpha > 0 else False
    return TestResult(
        name="omnibus",
        statistic=statistic,
        p_value=p_value,
        alpha=alpha,
        reject=reject,
        reference=f"chi-square({df})",
        df=df,
        method=getattr(estimate, "method", None),
    )


def _assignment_masks_mc(rng, n: int, n1: int, size: int) -> np.ndarray:
    base = np.broadcast_to(np.arange(n), (size, n))
    perms = rng.permuted(base, axis=1)
    masks = np.zeros((size, n), dtype=bool)
    masks[np.arange(size)[:, None], perms[:, :n1]] = True
    return masks


def _masks_from_index_rows(rows: np.ndarray, n: int) -> np.ndarray:
    masks = np.zeros((rows.shape[0], n), dtype=bool)
    masks[np.arange(rows.shape[0])[:, None], rows] = True
    return masks


def _statistic_rows(a: np.ndarray, masks: np.ndarray, n1: int, n0: int, kind: str, order: np.ndarray) -> np.ndarray:
    if kind == "diff_means":
        s1 = masks @ a
        total = a.sum()
        return np.abs(s1 / n1 - (total - s1) / n0)
    if kind == "diff_medians":
        treated = np.where(masks, a, np.nan)
        control = np.where(masks, np.nan, a)
        return np.abs(np.nanmedian(treated, axis=1) - np.nanmedian(control, axis=1))
    # Kolmogorov-Smirnov: cumulative membership along the pooled sort order
    sorted_masks = masks[:, order]
    c1 = np.cumsum(sorted_masks, axis=1) / n1
    c0 = np.cumsum(~sorted_masks, axis=1) / n0
    return np.max(np.abs(c1 - c0), axis=1)


def _randomization_pvalue(
    a: np.ndarray,
    t: np.ndarray,
    n1: int,
    statistic: str,
    draws: int,
    seed,
    exhaustive_limit: int,
) -> tuple[float, float, str, int]:
    n = a.shape[0]
    n0 = n - n1
    order = np.argsort(a, kind="stable")
    observed = float(
        _statistic_rows(a, t[None, :].astype(bool), n1, n0, statistic, order)[0]
    )
    total = math.comb(n, n1)
    if total <= exhaustive_limit:
        count = 0
        combos = combinations(range(n), n1)
        while True:
            block = list(islice(combos, _CHUNK))
            if not block:
                break
            masks = _masks_from_index_rows(np.array(block, dtype=np.intp), n)
            stats = _statistic_rows(a, masks, n1, n0, statistic, order)
            count += int((stats >= observed).sum())
        return observed, count / total, "exhaustive randomization", total
    rng = np.random.default_rng(seed)
    count = 0
    remaining = draws
    while remaining > 0:
        size = min(_CHUNK, remaining)
        masks = _assignment_masks_mc(rng, n, n1, size)
        stats = _statistic_rows(a, masks, n1, n0, statistic, order)
        count += int((stats >= observed).sum())
        remaining -= size
    return observed, (1 + count) / (draws + 1), "monte-carlo randomization", draws


def fisher_randomization_test(
    X,
    y,
    treatment,
    beta0,
    statistic: str = "diff_means",
    draws: int = 1000,
    seed=None,
    alpha: float = 0.05,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
) -> TestResult:
    """Exact randomization test of the sharp null that every unit's effect
    equals its covariate profile times ``beta0``.

    Under that null all missing potential outcomes are imputable, and the
    test reduces to comparing the effect-adjusted outcomes across arms over
    re-drawn complete randomizations with the treated count held fixed.
    When the number of possible assignments is at most ``exhaustive_limit``
    the full enumeration is used; otherwise ``draws`` Monte-Carlo
    assignments with the add-one p-value correction, which keeps the test
    valid at any draw count and never returns p = 0.
    """
    if statistic not in STATISTICS:
        raise HetfxError(f"statistic must be one of {STATISTICS}, got {statistic!r}")
    if draws < 100:
        raise HetfxError(f"draws must be at least 100, got {draws}")
    alpha = _check_alpha(alpha)
    x = as_float_matrix(X, "covariates")
    y = as_float_vector(y, "outcome")
    t, n1, _ = check_treatment(treatment, x.shape[0])
    beta0 = as_float_vector(beta0, "beta0")
    design = add_intercept(x)
    if beta0.shape[0] != design.shape[1]:
        raise HetfxError(
            f"beta0 must have length {design.shape[1]} (intercept included)"
        )
    adjusted = y - t * (design @ beta0)
    observed, p_value, mode, count = _randomization_pvalue(
        adjusted, t, n1, statistic, draws, seed, exhaustive_limit
    )
    return TestResult(
        name=f"fisher-{statistic.replace('_', '-')}",
        statistic=observed,
        p_value=p_value,
        alpha=alpha,
        reject=p_value <= alpha,
        reference=mode,
        draws=count,
    )


@dataclass(frozen=True)
class ConfidenceRegion:
    """Accept/reject decisions from inverting randomization tests.

    A candidate coefficient vector is accepted exactly when its
    randomization p-value exceeds ``alpha``.  All candidates are evaluated
    against the same assignment draws (same seed), so duplicates always
    agree.
    """

    candidates: np.ndarray
    p_values: np.ndarray
    accepted: np.ndarray
    alpha: float
    statistic: str
    draws: int

    def no_variation_accepted(self) -> bool | None:
        """Is any accepted candidate free of systematic variation?

        Looks for accepted candidates whose non-intercept coordinates are all
        zero; returns None when no such candidate was supplied.
        """
        flat = np.all(self.candidates[:, 1:] == 0.0, axis=1)
        if not flat.any():
            return None
        return bool(self.accepted[flat].any())


def fisher_confidence_region(
    X,
    y,
    treatment,
    candidates,
    alpha: float = 0.05,
    statistic: str = "diff_means",
    draws: int = 1000,
    seed=None,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
) -> ConfidenceRegion:
    """Invert randomization tests over an explicit list of candidate vectors."""
    cand = np.atleast_2d(np.asarray(list(candidates), dtype=float))
    if cand.size == 0:
        raise HetfxError("candidate list must be non-empty")
    alpha = _check_alpha(alpha)
    p_values = np.empty(cand.shape[0])
    used_draws = draws
    for i, beta0 in enumerate(cand):
        result = fisher_randomization_test(
            X,
            y,
            treatment,
            beta0,
            statistic=statistic,
            draws=draws,
            seed=seed,
            alpha=alpha,
            exhaustive_limit=exhaustive_limit,
        )
        p_values[i] = result.p_value
        used_draws = result.draws
    accepted = p_values > alpha
    return ConfidenceRegion(
        candidates=cand,
        p_values=p_values,
        accepted=accepted,
        alpha=alpha,
        statistic=statistic,
        draws=used_draws,
    )


def coordinate_grid_candidates(estimate, num: int = 21, half_width: float = 4.0) -> np.ndarray:
    """One-dimensional candidate grids around a fitted estimate.

    For each coordinate, ``num`` points spanning the estimate plus/minus
    ``half_width`` standard errors, with the other coordinates held at the
    estimate.  No claim of joint-region completeness; this is a search aid
    for :func:`fisher_confidence_region`.
    """
    beta = np.asarray(estimate.beta, dtype=float)
    se = np.asarray(estimate.std_errors, dtype=float)
    rows = []
    for j in range(beta.shape[0]):
        for value in np.linspace(beta[j] - half_width * se[j], beta[j] + half_width * se[j], num):
            row = beta.copy()
            row[j] = value
            rows.append(row)
    return np.array(rows)
