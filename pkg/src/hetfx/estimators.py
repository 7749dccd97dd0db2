"""Estimators of systematic treatment effect variation (intention-to-treat).

Three estimators of the coefficient vector relating unit-level treatment
effects to covariates, each with a randomization-justified covariance
estimate:

* :class:`RIEffects` - plug-in estimator using the full-sample covariate
  moment matrix; exactly unbiased over randomizations.
* :class:`OLSEffects` - fully interacted least squares, equal to two
  separate per-arm regressions; consistent, often more precise.
* :class:`AdjustedRIEffects` - model-assisted variant that regresses the
  outcome-scaled covariates on auxiliary covariates to shrink sampling
  noise.

All classes follow the scikit-learn estimator protocol: hyperparameters in
``__init__``, data in ``fit``, results in trailing-underscore attributes.
The intercept column is always added internally; pass covariates without it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import HetfxError, InsufficientDataError, MissingColumnError
from .finite_population import covariance_matrix
from .linalg import assert_invertible, inverse_symmetric, solve_symmetric, symmetrize
from .validation import (
    add_intercept,
    as_float_matrix,
    as_float_vector,
    check_treatment,
    default_labels,
    reject_constant_columns,
)

COV_MODES = ("conservative", "no_idiosyncratic")


@dataclass(frozen=True)
class BetaEstimate:
    """A fitted effect-variation coefficient vector with its covariance.

    ``beta`` equals ``gamma1 - gamma0``, the difference of the arm-level
    coefficient estimates.  ``residuals`` holds one value per unit, computed
    with the coefficient vector of the unit's own arm.
    """

    method: str
    beta: np.ndarray
    cov: np.ndarray
    gamma1: np.ndarray
    gamma0: np.ndarray
    residuals: np.ndarray
    labels: tuple[str, ...] = field(default=())

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _prepare(X, y, treatment, labels=None):
    x = as_float_matrix(X, "covariates")
    n = x.shape[0]
    y = as_float_vector(y, "outcome")
    if y.shape[0] != n:
        raise HetfxError(f"outcome has length {y.shape[0]}, expected {n}")
    t, n1, n0 = check_treatment(treatment, n)
    lab = tuple(labels or default_labels(x.shape[1]))
    reject_constant_columns(x, lab)
    design = add_intercept(x)
    return design, y, t, n1, n0, ("intercept",) + lab


def arm_residuals(X, y, treatment, gamma1, gamma0) -> np.ndarray:
    """Per-unit residuals against the coefficient vector of each unit's arm."""
    design, y, t, _, _, _ = _prepare(X, y, treatment)
    gamma1 = as_float_vector(gamma1, "gamma1")
    gamma0 = as_float_vector(gamma0, "gamma0")
    if gamma1.shape[0] != design.shape[1] or gamma0.shape[0] != design.shape[1]:
        raise HetfxError(
            f"coefficient length must be {design.shape[1]} (intercept included)"
        )
    fitted = np.where(t == 1, design @ gamma1, design @ gamma0)
    return y - fitted


def _sandwich(bread1, meat1, bread0, meat0) -> np.ndarray:
    return symmetrize(bread1 @ meat1 @ bread1 + bread0 @ meat0 @ bread0)


def fit_ri(X, y, treatment, cov_mode: str = "conservative", labels=None) -> BetaEstimate:
    """Randomization-based estimator using the fixed full-sample moment matrix.

    The coefficient estimate is exactly unbiased over all randomizations.
    The default covariance drops the unidentifiable effect-dispersion term
    and is therefore conservative; ``cov_mode='no_idiosyncratic'`` subtracts
    a plug-in for that term computed from the fitted systematic effects,
    which is valid only if every unit's idiosyncratic effect is zero.
    """
    if cov_mode not in COV_MODES:
        raise HetfxError(f"cov_mode must be one of {COV_MODES}, got {cov_mode!r}")
    design, y, t, n1, n0, lab = _prepare(X, y, treatment, labels)
    n = design.shape[0]
    if n1 < 2 or n0 < 2:
        raise InsufficientDataError(f"both arms need at least 2 units (n1={n1}, n0={n0})")
    sxx = design.T @ design / n
    sxx_inv = inverse_symmetric(sxx, labels=lab, what="covariate moment matrix")
    treated, control = t == 1, t == 0
    sx1 = design[treated].T @ y[treated] / n1
    sx0 = design[control].T @ y[control] / n0
    gamma1 = sxx_inv @ sx1
    gamma0 = sxx_inv @ sx0
    beta = gamma1 - gamma0

    scaled = y[:, None] * design
    meat = (
        covariance_matrix(scaled[treated]) / n1
        + covariance_matrix(scaled[control]) / n0
    )
    if cov_mode == "no_idiosyncratic":
        systematic = design @ beta
        meat = meat - covariance_matrix(systematic[:, None] * design) / n
    cov = symmetrize(sxx_inv @ meat @ sxx_inv)

    residuals = y - np.where(t == 1, design @ gamma1, design @ gamma0)
    return BetaEstimate("RI", beta, cov, gamma1, gamma0, residuals, lab)


def fit_ols(X, y, treatment, labels=None) -> BetaEstimate:
    """Fully interacted least squares; equals two per-arm regressions.

    Covariance is the heteroskedasticity-robust sandwich built from per-arm
    residual moments, conservative for the randomization distribution.
    """
    design, y, t, n1, n0, lab = _prepare(X, y, treatment, labels)
    k = design.shape[1]
    if n1 < k + 1 or n0 < k + 1:
        raise InsufficientDataError(
            f"per-arm regression needs at least {k + 1} units per arm "
            f"(n1={n1}, n0={n0})"
        )
    treated, control = t == 1, t == 0
    gammas = {}
    breads = {}
    for arm, mask, n_arm in ((1, treated, n1), (0, control, n0)):
        sxx_arm = design[mask].T @ design[mask] / n_arm
        breads[arm] = inverse_symmetric(
            sxx_arm, labels=lab, what=f"arm-{arm} covariate moment matrix"
        )
        gammas[arm] = breads[arm] @ (design[mask].T @ y[mask] / n_arm)
    beta = gammas[1] - gammas[0]
    residuals = y - np.where(t == 1, design @ gammas[1], design @ gammas[0])
    scaled = residuals[:, None] * design
    cov = _sandwich(
        breads[1],
        covariance_matrix(scaled[treated]) / n1,
        breads[0],
        covariance_matrix(scaled[control]) / n0,
    )
    return BetaEstimate("OLS", beta, cov, gammas[1], gammas[0], residuals, lab)


def fit_ri_adjusted(X, y, treatment, adjust, labels=None, adjust_labels=None) -> BetaEstimate:
    """Model-assisted randomization estimator.

    The per-arm cross moments of outcome-scaled covariates are adjusted by
    their regression on auxiliary covariates (supplied without an intercept
    column), removing the part of their sampling noise explained by chance
    imbalance in those covariates.  Reduces to :func:`fit_ri` when the
    auxiliary covariates are balanced or unpredictive.
    """
    if adjust is None:
        raise MissingColumnError("adjustment covariates are required for this estimator")
    design, y, t, n1, n0, lab = _prepare(X, y, treatment, labels)
    n = design.shape[0]
    if n1 < 2 or n0 < 2:
        raise InsufficientDataError(f"both arms need at least 2 units (n1={n1}, n0={n0})")
    w = as_float_matrix(adjust, "adjustment covariates")
    if w.shape[0] != n:
        raise HetfxError(f"adjustment covariates have {w.shape[0]} rows, expected {n}")
    wlab = tuple(adjust_labels or default_labels(w.shape[1], prefix="w"))

    sww = w.T @ w / n
    assert_invertible(sww, labels=wlab, what="adjustment moment matrix")
    w_bar = w.mean(axis=0)
    sxx = design.T @ design / n
    sxx_inv = inverse_symmetric(sxx, labels=lab, what="covariate moment matrix")

    treated, control = t == 1, t == 0
    scaled = y[:, None] * design
    adjusted_moments = {}
    coefs = {}
    for arm, mask, n_arm in ((1, treated, n1), (0, control, n0)):
        w_arm = w[mask]
        sww_arm = w_arm.T @ w_arm / n_arm
        cross = w_arm.T @ scaled[mask] / n_arm
        coefs[arm] = solve_symmetric(
            sww_arm, cross, labels=wlab, what=f"arm-{arm} adjustment moment matrix"
        )
        sxt = scaled[mask].mean(axis=0)
        adjusted_moments[arm] = sxt - coefs[arm].T @ (w_arm.mean(axis=0) - w_bar)

    gamma1 = sxx_inv @ adjusted_moments[1]
    gamma0 = sxx_inv @ adjusted_moments[0]
    beta = gamma1 - gamma0

    centered_w = w - w_bar
    adjusted_rows = np.where(
        (t == 1)[:, None], scaled - centered_w @ coefs[1], scaled - centered_w @ coefs[0]
    )
    meat = (
        covariance_matrix(adjusted_rows[treated]) / n1
        + covariance_matrix(adjusted_rows[control]) / n0
    )
    cov = symmetrize(sxx_inv @ meat @ sxx_inv)
    residuals = y - np.where(t == 1, design @ gamma1, design @ gamma0)
    return BetaEstimate("RI-adjusted", beta, cov, gamma1, gamma0, residuals, lab)


class _FittedEffectsMixin:
    """Shared post-fit attribute wiring."""

    def _store(self, estimate: BetaEstimate):
        self.estimate_ = estimate
        self.beta_ = estimate.beta
        self.cov_ = estimate.cov
        self.gamma1_ = estimate.gamma1
        self.gamma0_ = estimate.gamma0
        self.residuals_ = estimate.residuals
        self.labels_ = estimate.labels
        self.n_features_in_ = estimate.beta.shape[0] - 1
        return self


class RIEffects(BaseEstimator, _FittedEffectsMixin):
    """Randomization-based effect-variation estimator.

    Parameters
    ----------
    cov_mode : {'conservative', 'no_idiosyncratic'}
        'conservative' (default) omits the unidentifiable effect-dispersion
        term.  'no_idiosyncratic' is opt-in and assumes every unit's
        idiosyncratic effect is zero.
    """

    def __init__(self, cov_mode: str = "conservative"):
        self.cov_mode = cov_mode

    def fit(self, X, y, *, treatment, labels=None):
        return self._store(fit_ri(X, y, treatment, cov_mode=self.cov_mode, labels=labels))


class OLSEffects(BaseEstimator, _FittedEffectsMixin):
    """Fully interacted least-squares effect-variation estimator."""

    def fit(self, X, y, *, treatment, labels=None):
        return self._store(fit_ols(X, y, treatment, labels=labels))


class AdjustedRIEffects(BaseEstimator, _FittedEffectsMixin):
    """Model-assisted randomization estimator with auxiliary adjustment."""

    def fit(self, X, y, *, treatment, adjust, labels=None, adjust_labels=None):
        return self._store(
            fit_ri_adjusted(
                X, y, treatment, adjust, labels=labels, adjust_labels=adjust_labels
            )
        )
