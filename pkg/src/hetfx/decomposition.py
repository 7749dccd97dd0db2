"""Decomposition of treatment effect variation for intention-to-treat analysis.

Splits total effect variation into a systematic part explained by covariates
(point-identified) and an idiosyncratic remainder (interval-identified via
quantile-coupling bounds on the arm residual distributions), with a
one-parameter sensitivity curve interpolating the bounds.

Variance conventions: effect variances here use divisor ``n`` (or the arm
size); the classic conservative variance of the mean-difference estimator
uses per-arm sample variances with divisor ``n_t - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.special

from .estimators import BetaEstimate
from .exceptions import DegenerateSampleError, HetfxError, InsufficientDataError
from .finite_population import quantile_integral
from .inference import TestResult, _check_alpha
from .validation import add_intercept, as_float_matrix, as_float_vector, check_treatment

R2_OK = "ok"
R2_UNDEFINED = "undefined"


@dataclass(frozen=True)
class CurvePoint:
    """One sensitivity-curve evaluation."""

    rho: float
    idiosyncratic_variance: float
    r_squared: float | None


@dataclass(frozen=True)
class VariationDecomposition:
    """Systematic variance plus interval bounds on the idiosyncratic part.

    ``r2_status`` is 'undefined' when both the systematic variance and the
    selected idiosyncratic upper bound are zero (a 0/0 ratio); the bounds are
    then ``None`` rather than a misleading 0 or 1.
    """

    method: str
    systematic_variance: float
    idiosyncratic_lower: float
    idiosyncratic_upper_independent: float
    idiosyncratic_upper_frechet: float
    treated_residual_variance: float
    control_residual_variance: float
    assume_nonneg_corr: bool
    r2_lower: float | None
    r2_upper: float | None
    r2_status: str
    rho_curve: tuple[CurvePoint, ...]

    @property
    def idiosyncratic_upper_selected(self) -> float:
        """Upper bound honoring the nonnegative-correlation assumption flag."""
        if self.assume_nonneg_corr:
            return self.idiosyncratic_upper_independent
        return self.idiosyncratic_upper_frechet


def _r2_pair(systematic: float, lower: float, upper: float) -> tuple[float | None, float | None, str]:
    if systematic == 0.0 and upper == 0.0:
        return None, None, R2_UNDEFINED
    if systematic == 0.0:
        return 0.0, 0.0, R2_OK
    return systematic / (systematic + upper), systematic / (systematic + lower), R2_OK


def _centered_arm_residuals(residuals: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Population residuals are mean-zero by construction; fitted ones need
    # per-arm centering so the mean-zero premise of the coupling bounds holds.
    e1 = residuals[t == 1]
    e0 = residuals[t == 0]
    return e1 - e1.mean(), e0 - e0.mean()


def decompose_itt(
    X,
    y,
    treatment,
    estimate: BetaEstimate,
    assume_nonneg_corr: bool = False,
    rho_grid=None,
) -> VariationDecomposition:
    """Decompose effect variation using a fitted effect-variation estimate.

    Parameters
    ----------
    X, y, treatment
        The data the estimate was fitted on (covariates without intercept).
    estimate : BetaEstimate
        Any of the intention-to-treat estimators.
    assume_nonneg_corr : bool
        Select the independence value as the idiosyncratic upper bound
        (valid when the arm residuals are nonnegatively correlated) instead
        of the antimatched coupling bound.
    rho_grid : array-like in [0, 1], optional
        Sensitivity grid; defaults to 101 evenly spaced points.
    """
    x = as_float_matrix(X, "covariates")
    y = as_float_vector(y, "outcome")
    t, n1, n0 = check_treatment(treatment, x.shape[0])
    if n1 < 2 or n0 < 2:
        raise InsufficientDataError(f"both arms need at least 2 units (n1={n1}, n0={n0})")
    design = add_intercept(x)
    if estimate.beta.shape[0] != design.shape[1]:
        raise HetfxError("estimate does not match the covariate dimension")
    if estimate.residuals.shape[0] != design.shape[0]:
        raise HetfxError("estimate was fitted on a different number of units")

    systematic = design @ estimate.beta
    # np.var of a bitwise-constant vector returns rounding dust, not 0
    s_systematic = 0.0 if np.ptp(systematic) == 0.0 else float(np.var(systematic))  # divisor n

    e1, e0 = _centered_arm_residuals(estimate.residuals, t)
    v1 = float(e1 @ e1 / e1.shape[0])  # divisor n_t: matches the coupling integrals
    v0 = float(e0 @ e0 / e0.shape[0])
    lower = quantile_integral(e1, e0, "matched")
    upper_frechet = quantile_integral(e1, e0, "antimatched")
    upper_indep = v1 + v0

    selected = upper_indep if assume_nonneg_corr else upper_frechet
    r2_lower, r2_upper, status = _r2_pair(s_systematic, lower, selected)

    if rho_grid is None:
        rho_grid = np.linspace(0.0, 1.0, 101)
    curve = _sensitivity_points(s_systematic, lower, upper_indep, rho_grid)

    return VariationDecomposition(
        method=estimate.method,
        systematic_variance=s_systematic,
        idiosyncratic_lower=lower,
        idiosyncratic_upper_independent=upper_indep,
        idiosyncratic_upper_frechet=upper_frechet,
        treated_residual_variance=v1,
        control_residual_variance=v0,
        assume_nonneg_corr=bool(assume_nonneg_corr),
        r2_lower=r2_lower,
        r2_upper=r2_upper,
        r2_status=status,
        rho_curve=curve,
    )


def _sensitivity_points(systematic, lower, upper_indep, rho_grid) -> tuple[CurvePoint, ...]:
    rho = np.asarray(rho_grid, dtype=float)
    if rho.ndim != 1:
        raise HetfxError("rho grid must be one-dimensional")
    if ((rho < 0.0) | (rho > 1.0)).any():
        raise HetfxError("rho values must lie in [0, 1]")
    points = []
    for r in rho:
        see = float(r * lower + (1.0 - r) * upper_indep)
        if systematic == 0.0 and see == 0.0:
            r2 = None
        else:
            r2 = float(systematic / (systematic + see))
        points.append(CurvePoint(rho=float(r), idiosyncratic_variance=see, r_squared=r2))
    return tuple(points)


def sensitivity_curve(decomposition: VariationDecomposition, rho_grid) -> tuple[CurvePoint, ...]:
    """Idiosyncratic variance and explained-variation share along a rho grid.

    The rank-preservation parameter rho interpolates linearly between the
    independence value (rho = 0) and the matched-coupling lower bound
    (rho = 1).
    """
    return _sensitivity_points(
        decomposition.systematic_variance,
        decomposition.idiosyncratic_lower,
        decomposition.idiosyncratic_upper_independent,
        rho_grid,
    )


@dataclass(frozen=True)
class VarianceBounds:
    """Bounds for the variance of the overall mean-difference estimator."""

    lower: float
    upper: float
    neyman_conservative: float
    clamped: bool


def var_tau_bounds(y, treatment, decomposition: VariationDecomposition) -> VarianceBounds:
    """Sharper variance bounds for the overall effect estimator.

    Subtracting the decomposed effect variation from the classic conservative
    value tightens it strictly whenever the systematic variance is positive.
    Numerically negative results are clamped to zero and flagged.
    """
    y = as_float_vector(y, "outcome")
    t, n1, n0 = check_treatment(treatment, y.shape[0])
    if n1 < 2 or n0 < 2:
        raise InsufficientDataError(f"both arms need at least 2 units (n1={n1}, n0={n0})")
    s1 = float(np.var(y[t == 1], ddof=1))
    s0 = float(np.var(y[t == 0], ddof=1))
    n = y.shape[0]
    conservative = s1 / n1 + s0 / n0
    upper = conservative - (decomposition.systematic_variance + decomposition.idiosyncratic_lower) / n
    lower = conservative - (
        decomposition.systematic_variance + decomposition.idiosyncratic_upper_selected
    ) / n
    clamped = False
    if lower < 0.0:
        lower, clamped = 0.0, True
    if upper < 0.0:
        upper, clamped = 0.0, True
    return VarianceBounds(lower=lower, upper=upper, neyman_conservative=conservative, clamped=clamped)


def variance_ratio_test(X, y, treatment, estimate: BetaEstimate, alpha: float = 0.05) -> TestResult:
    """One-sided test for effect variation negatively tied to control outcomes.

    Compares the log variance of the effect-adjusted treated outcomes with
    the log variance of the raw control outcomes, studentized with per-arm
    kurtosis.  Rejection (statistic below the lower-tail normal quantile)
    indicates the unexplained effect is larger where control outcomes are
    smaller.  Kurtosis is the non-excess moment ratio with arm-size divisor.
    """
    alpha = _check_alpha(alpha)
    x = as_float_matrix(X, "covariates")
    y = as_float_vector(y, "outcome")
    t, n1, n0 = check_treatment(treatment, x.shape[0])
    if n1 < 4 or n0 < 4:
        raise InsufficientDataError(
            f"kurtosis needs at least 4 units per arm (n1={n1}, n0={n0})"
        )
    design = add_intercept(x)
    if estimate.beta.shape[0] != design.shape[1]:
        raise HetfxError("estimate does not match the covariate dimension")
    treated = y[t == 1] - design[t == 1] @ estimate.beta
    control = y[t == 0]

    def variance_and_kurtosis(sample: np.ndarray) -> tuple[float, float]:
        var = float(np.var(sample, ddof=1))
        if var == 0.0:
            raise DegenerateSampleError("zero variance in one arm; ratio undefined")
        centered = sample - sample.mean()
        m2 = float(np.mean(centered**2))
        m4 = float(np.mean(centered**4))
        return var, m4 / (m2 * m2)

    s1, k1 = variance_and_kurtosis(treated)
    s0, k0 = variance_and_kurtosis(control)
    scale = np.sqrt((k1 - 1.0) / n1 + (k0 - 1.0) / n0)
    statistic = float((np.log(s1) - np.log(s0)) / scale)
    p_value = float(scipy.special.ndtr(statistic))
    reject = bool(alpha > 0 and statistic < scipy.special.ndtri(alpha))
    return TestResult(
        name="variance-ratio",
        statistic=statistic,
        p_value=p_value,
        alpha=alpha,
        reject=reject,
        reference="standard normal, lower tail",
        method=estimate.method,
    )
