"""Effect-variation analysis under noncompliance.

Units are only partially classified by assignment and receipt, so complier
quantities are recovered by differencing observed cell moments: the
always-taker and never-taker contributions cancel under monotonicity and the
exclusion restrictions.  Two estimators of the complier coefficient vector
are provided (moment differencing and two-stage least squares), plus the
three-part decomposition of total effect variation into complier-systematic,
complier-idiosyncratic, and noncompliance components.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .estimators import _prepare
from .exceptions import (
    HetfxError,
    InsufficientDataError,
    MissingColumnError,
    WeakInstrumentError,
    WeakInstrumentWarning,
)
from .finite_population import _step_quantile_integral, covariance_matrix
from .linalg import inverse_symmetric, solve_square, symmetrize
from .validation import as_binary_vector, check_treatment

WEAK_INSTRUMENT_SHARE = 0.05


@dataclass(frozen=True)
class ComplianceSummary:
    """Observed assignment-by-receipt counts and plug-in strata shares."""

    counts: np.ndarray  # counts[t][d]
    always_share: float
    never_share: float
    complier_share: float
    strong_instrument: bool


def compliance_proportions(treatment, receipt) -> ComplianceSummary:
    """Plug-in compliance strata proportions from the observed cell counts.

    Under monotonicity the never-taker share is the treated nonreceipt rate,
    the always-taker share is the control receipt rate, and the complier
    share is their complement difference.  ``strong_instrument`` is False
    below a 5% complier share; a nonpositive share is reported, not raised,
    so callers can decide.
    """
    if receipt is None:
        raise MissingColumnError("receipt indicator is required for compliance analysis")
    t = np.asarray(treatment)
    d = as_binary_vector(receipt, "receipt")
    t, n1, n0 = check_treatment(t, d.shape[0])
    counts = np.array(
        [
            [int(((t == 0) & (d == 0)).sum()), int(((t == 0) & (d == 1)).sum())],
            [int(((t == 1) & (d == 0)).sum()), int(((t == 1) & (d == 1)).sum())],
        ]
    )
    never = counts[1, 0] / n1
    always = counts[0, 1] / n0
    complier = counts[1, 1] / n1 - counts[0, 1] / n0
    return ComplianceSummary(
        counts=counts,
        always_share=float(always),
        never_share=float(never),
        complier_share=float(complier),
        strong_instrument=bool(complier >= WEAK_INSTRUMENT_SHARE),
    )


@dataclass(frozen=True)
class LateEstimate:
    """Complier effect-variation coefficients with covariance and residuals.

    Residuals are formed by receipt status: units that received the
    treatment use the treated-complier coefficients (for TSLS, the sum of the
    base and interaction coefficients), the rest use the control ones.
    """

    method: str
    beta: np.ndarray
    cov: np.ndarray
    residuals: np.ndarray
    labels: tuple[str, ...] = ()
    gamma_1c: np.ndarray | None = None
    gamma_0c: np.ndarray | None = None
    gamma_infinity: np.ndarray | None = None

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _prepare_receipt(design, receipt):
    if receipt is None:
        raise MissingColumnError("receipt indicator is required for complier estimators")
    d = as_binary_vector(receipt, "receipt")
    if d.shape[0] != design.shape[0]:
        raise HetfxError(f"receipt has length {d.shape[0]}, expected {design.shape[0]}")
    return d


def _check_instrument_strength(t, d) -> float:
    """Hard error at a nonpositive complier share; warn below the 5% mark."""
    summary = compliance_proportions(t, d)
    share = summary.complier_share
    if share <= 0.0:
        raise WeakInstrumentError(
            f"estimated complier share is {share:.4f}; complier estimation requires > 0"
        )
    if not summary.strong_instrument:
        warnings.warn(
            f"estimated complier share {share:.4f} is below {WEAK_INSTRUMENT_SHARE}",
            WeakInstrumentWarning,
            stacklevel=3,
        )
    return share


def _cell_moment_diffs(design, y, t, d, n1, n0):
    """Per-arm differences of assignment-by-receipt cell moments.

    Cell moments are scaled by the arm size, so each difference is unbiased
    for the complier share times the complier population moment.
    """
    def cell(tv, dv):
        mask = (t == tv) & (d == dv)
        n_arm = n1 if tv == 1 else n0
        xx = design[mask].T @ design[mask] / n_arm
        xy = design[mask].T @ y[mask] / n_arm
        return xx, xy

    xx11, xy11 = cell(1, 1)
    xx10, xy10 = cell(1, 0)
    xx01, xy01 = cell(0, 1)
    xx00, xy00 = cell(0, 0)
    return (xx11 - xx01, xy11 - xy01), (xx00 - xx10, xy00 - xy10)


def _complier_sandwich(design, residuals, t, n1, n0, bread1, bread0):
    scaled = residuals[:, None] * design
    meat1 = covariance_matrix(scaled[t == 1]) / n1
    meat0 = covariance_matrix(scaled[t == 0]) / n0
    return symmetrize(bread1 @ meat1 @ bread1 + bread0 @ meat0 @ bread0)


def fit_complier_ri(X, y, treatment, receipt, labels=None) -> LateEstimate:
    """Moment-differencing estimator of complier effect variation.

    Solves the complier normal equations built from differenced cell
    moments; consistent under monotonicity, the exclusion restrictions, and
    a strong instrument.  Singular difference matrices indicate a weak
    instrument and raise.
    """
    design, y, t, n1, n0, lab = _prepare(X, y, treatment, labels)
    d = _prepare_receipt(design, receipt)
    if n1 < 2 or n0 < 2:
        raise InsufficientDataError(f"both arms need at least 2 units (n1={n1}, n0={n0})")
    _check_instrument_strength(t, d)
    (xx1, xy1), (xx0, xy0) = _cell_moment_diffs(design, y, t, d, n1, n0)
    bread1 = inverse_symmetric(
        xx1, labels=lab, what="treated-side complier moment difference", exc=WeakInstrumentError
    )
    bread0 = inverse_symmetric(
        xx0, labels=lab, what="control-side complier moment difference", exc=WeakInstrumentError
    )
    gamma_1c = bread1 @ xy1
    gamma_0c = bread0 @ xy0
    beta = gamma_1c - gamma_0c
    residuals = y - np.where(d == 1, design @ gamma_1c, design @ gamma_0c)
    cov = _complier_sandwich(design, residuals, t, n1, n0, bread1, bread0)
    return LateEstimate(
        method="RI-complier",
        beta=beta,
        cov=cov,
        residuals=residuals,
        labels=lab,
        gamma_1c=gamma_1c,
        gamma_0c=gamma_0c,
    )


def fit_tsls(X, y, treatment, receipt, labels=None) -> LateEstimate:
    """Fully interacted two-stage least squares with assignment as instrument.

    Solves the estimating equations exactly via the stacked block system of
    base and instrument-weighted moments; the interaction block is the
    complier effect-variation estimate and the base block converges to the
    control-outcome regression only without always-takers.
    """
    design, y, t, n1, n0, lab = _prepare(X, y, treatment, labels)
    d = _prepare_receipt(design, receipt)
    if n1 < 2 or n0 < 2:
        raise InsufficientDataError(f"both arms need at least 2 units (n1={n1}, n0={n0})")
    _check_instrument_strength(t, d)
    n, k = design.shape
    a = design.T @ design / n
    b = design.T @ (d[:, None] * design) / n
    c = design.T @ (t[:, None] * design) / n
    dd = design.T @ ((t * d)[:, None] * design) / n
    g = design.T @ y / n
    h = design.T @ (t * y) / n
    block = np.block([[a, b], [c, dd]])
    rhs = np.concatenate([g, h])
    solution = solve_square(
        block, rhs, what="instrumented moment block system", exc=WeakInstrumentError
    )
    gamma = solution[:k]
    beta = solution[k:]
    residuals = y - np.where(d == 1, design @ (gamma + beta), design @ gamma)
    (xx1, _), (xx0, _) = _cell_moment_diffs(design, y, t, d, n1, n0)
    bread1 = inverse_symmetric(
        xx1, labels=lab, what="treated-side complier moment difference", exc=WeakInstrumentError
    )
    bread0 = inverse_symmetric(
        xx0, labels=lab, what="control-side complier moment difference", exc=WeakInstrumentError
    )
    cov = _complier_sandwich(design, residuals, t, n1, n0, bread1, bread0)
    return LateEstimate(
        method="TSLS",
        beta=beta,
        cov=cov,
        residuals=residuals,
        labels=lab,
        gamma_infinity=gamma,
    )


class ComplierRIEffects(BaseEstimator):
    """Moment-differencing complier effect-variation estimator."""

    def fit(self, X, y, *, treatment, receipt, labels=None):
        estimate = fit_complier_ri(X, y, treatment, receipt, labels=labels)
        self.estimate_ = estimate
        self.beta_ = estimate.beta
        self.cov_ = estimate.cov
        self.residuals_ = estimate.residuals
        self.labels_ = estimate.labels
        self.gamma_1c_ = estimate.gamma_1c
        self.gamma_0c_ = estimate.gamma_0c
        self.n_features_in_ = estimate.beta.shape[0] - 1
        return self


class TSLSEffects(BaseEstimator):
    """Fully interacted two-stage least-squares estimator."""

    def fit(self, X, y, *, treatment, receipt, labels=None):
        estimate = fit_tsls(X, y, treatment, receipt, labels=labels)
        self.estimate_ = estimate
        self.beta_ = estimate.beta
        self.cov_ = estimate.cov
        self.residuals_ = estimate.residuals
        self.labels_ = estimate.labels
        self.gamma_infinity_ = estimate.gamma_infinity
        self.n_features_in_ = estimate.beta.shape[0] - 1
        return self


@dataclass(frozen=True)
class StepDistribution:
    """A discrete distribution given by its step CDF.

    ``support`` is ascending; ``cdf`` is weakly increasing with final value
    one.  Quantiles use the left-continuous generalized inverse.
    """

    support: np.ndarray
    cdf: np.ndarray

    def probabilities(self) -> np.ndarray:
        return np.diff(self.cdf, prepend=0.0)

    def mean(self) -> float:
        return float(self.probabilities() @ self.support)

    def variance(self) -> float:
        p = self.probabilities()
        mu = p @ self.support
        return float(p @ (self.support - mu) ** 2)

    def cdf_at(self, value: float) -> float:
        idx = int(np.searchsorted(self.support, value, side="right"))
        return float(self.cdf[idx - 1]) if idx > 0 else 0.0

    def quantile(self, u: float) -> float:
        if not 0.0 < u <= 1.0:
            raise HetfxError(f"quantile level must be in (0, 1], got {u}")
        return float(self.support[np.searchsorted(self.cdf, u, side="left")])


def _cell_subcdf(values: np.ndarray, grid: np.ndarray, scale: int) -> np.ndarray:
    ordered = np.sort(values)
    return np.searchsorted(ordered, grid, side="right") / scale


def complier_residual_cdfs(
    treatment, receipt, residuals, complier_share: float
) -> tuple[StepDistribution, StepDistribution]:
    """Estimated complier residual CDFs under treatment and control.

    Differences of assignment-by-receipt cell sub-CDFs, scaled by the
    complier share.  The raw differences need not be monotone or inside
    [0, 1]; they are clipped to [0, 1], rearranged monotone by a running
    maximum, and rescaled to reach one, which makes them quantile-invertible.
    """
    if complier_share <= 0.0:
        raise WeakInstrumentError(
            f"complier share must be positive, got {complier_share:.4f}"
        )
    t = np.asarray(treatment)
    d = np.asarray(receipt)
    e = np.asarray(residuals, dtype=float)
    n1 = int((t == 1).sum())
    n0 = int((t == 0).sum())
    grid = np.unique(e)

    f11 = _cell_subcdf(e[(t == 1) & (d == 1)], grid, n1)
    f10 = _cell_subcdf(e[(t == 1) & (d == 0)], grid, n1)
    f01 = _cell_subcdf(e[(t == 0) & (d == 1)], grid, n0)
    f00 = _cell_subcdf(e[(t == 0) & (d == 0)], grid, n0)

    def postprocess(raw: np.ndarray) -> StepDistribution:
        vals = np.clip(raw, 0.0, 1.0)
        vals = np.maximum.accumulate(vals)
        top = vals[-1]
        if top <= 0.0:
            raise WeakInstrumentError(
                "estimated complier distribution has zero total mass"
            )
        return StepDistribution(support=grid, cdf=vals / top)

    treated = postprocess((f11 - f01) / complier_share)
    control = postprocess((f00 - f10) / complier_share)
    return treated, control


def _centered_step_integral(
    dist1: StepDistribution, dist0: StepDistribution, antithetic: bool
) -> float:
    # Shift each distribution to mean zero so the coupling integrals bound
    # the variance of a mean-zero difference, matching the ITT convention.
    return _step_quantile_integral(
        dist1.support - dist1.mean(),
        dist1.cdf,
        dist0.support - dist0.mean(),
        dist0.cdf,
        antithetic,
    )


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float


@dataclass(frozen=True)
class LateCurvePoint:
    rho: float
    complier_idiosyncratic_variance: float
    r2_noncompliance: float | None
    r2_compliers: float | None
    r2_combined: float | None


@dataclass(frozen=True)
class LateDecomposition:
    """Three-part decomposition of total effect variation under noncompliance.

    Total variation splits into noncompliance variation (a known function of
    the complier share and the complier average effect), complier systematic
    variation, and complier idiosyncratic variation; the last is interval
    identified, making each explained-share measure an interval.  A ``None``
    interval marks a 0/0 ratio for that measure.
    """

    method: str
    summary: ComplianceSummary
    complier_average_effect: float
    noncompliance_variance: float
    complier_systematic_variance: float
    systematic_clamped: bool
    complier_idiosyncratic_lower: float
    complier_idiosyncratic_upper_independent: float
    complier_idiosyncratic_upper_frechet: float
    complier_treated_residual_variance: float
    complier_control_residual_variance: float
    assume_nonneg_corr: bool
    r2_noncompliance: Interval | None
    r2_compliers: Interval | None
    r2_combined: Interval | None
    r2_status: str
    rho_curve: tuple[LateCurvePoint, ...]

    @property
    def complier_idiosyncratic_upper_selected(self) -> float:
        if self.assume_nonneg_corr:
            return self.complier_idiosyncratic_upper_independent
        return self.complier_idiosyncratic_upper_frechet


def _complier_weighted_mean(values, t, d, n1, n0, complier_share) -> float:
    """Complier-population mean via the differencing weights.

    The all-units average minus the scaled treated-nonreceipt and
    control-receipt cell sums removes the never-taker and always-taker
    contributions in expectation.
    """
    total = float(values.mean())
    never_term = float(values[(t == 1) & (d == 0)].sum()) / n1
    always_term = float(values[(t == 0) & (d == 1)].sum()) / n0
    return (total - never_term - always_term) / complier_share


def _ratio_or_none(numerator: float, denominator: float) -> float | None:
    if denominator == 0.0:
        return None if numerator == 0.0 else 1.0
    return numerator / denominator


def _late_r2_values(
    noncompliance: float, complier_systematic: float, complier_share: float, see: float
) -> tuple[float | None, float | None, float | None]:
    total = noncompliance + complier_share * (complier_systematic + see)
    r2_u = _ratio_or_none(noncompliance, total)
    r2_c = _ratio_or_none(complier_systematic, complier_systematic + see)
    r2_ux = _ratio_or_none(noncompliance + complier_share * complier_systematic, total)
    return r2_u, r2_c, r2_ux


def decompose_late(
    X,
    y,
    treatment,
    receipt,
    estimate: LateEstimate,
    assume_nonneg_corr: bool = False,
    rho_grid=None,
) -> LateDecomposition:
    """Decompose total effect variation in the presence of noncompliance.

    The complier average effect and the complier variance of the fitted
    systematic effects are recovered by the differencing weights (their
    plug-in can go slightly negative in samples; it is clamped to zero and
    flagged).  Idiosyncratic bounds come from the quantile couplings of the
    estimated complier residual distributions.
    """
    design, y, t, n1, n0, _ = _prepare(X, y, treatment)
    d = _prepare_receipt(design, receipt)
    summary = compliance_proportions(t, d)
    pi_c = summary.complier_share
    if pi_c <= 0.0:
        raise WeakInstrumentError(
            f"estimated complier share is {pi_c:.4f}; decomposition requires > 0"
        )
    if estimate.beta.shape[0] != design.shape[1]:
        raise HetfxError("estimate does not match the covariate dimension")

    systematic = design @ estimate.beta
    tau_c = _complier_weighted_mean(systematic, t, d, n1, n0, pi_c)
    noncompliance_var = pi_c * (1.0 - pi_c) * tau_c**2
    raw_s_dd_c = _complier_weighted_mean((systematic - tau_c) ** 2, t, d, n1, n0, pi_c)
    clamped = raw_s_dd_c < 0.0
    s_dd_c = max(raw_s_dd_c, 0.0)

    treated_cdf, control_cdf = complier_residual_cdfs(t, d, estimate.residuals, pi_c)
    v1c = treated_cdf.variance()
    v0c = control_cdf.variance()
    lower = _centered_step_integral(treated_cdf, control_cdf, antithetic=False)
    upper_frechet = _centered_step_integral(treated_cdf, control_cdf, antithetic=True)
    upper_indep = v1c + v0c
    selected = upper_indep if assume_nonneg_corr else upper_frechet

    # endpoints: every measure is decreasing in the idiosyncratic variance
    at_upper = _late_r2_values(noncompliance_var, s_dd_c, pi_c, selected)
    at_lower = _late_r2_values(noncompliance_var, s_dd_c, pi_c, lower)

    def interval(low_val, high_val) -> Interval | None:
        if low_val is None or high_val is None:
            return None
        return Interval(lower=float(low_val), upper=float(high_val))

    intervals = tuple(interval(lo, hi) for lo, hi in zip(at_upper, at_lower))
    total_at_upper = noncompliance_var + pi_c * (s_dd_c + selected)
    status = "undefined" if total_at_upper == 0.0 else "ok"

    if rho_grid is None:
        rho_grid = np.linspace(0.0, 1.0, 101)
    curve = _late_sensitivity_points(
        noncompliance_var, s_dd_c, pi_c, lower, upper_indep, rho_grid
    )
    return LateDecomposition(
        method=estimate.method,
        summary=summary,
        complier_average_effect=float(tau_c),
        noncompliance_variance=float(noncompliance_var),
        complier_systematic_variance=float(s_dd_c),
        systematic_clamped=bool(clamped),
        complier_idiosyncratic_lower=lower,
        complier_idiosyncratic_upper_independent=float(upper_indep),
        complier_idiosyncratic_upper_frechet=upper_frechet,
        complier_treated_residual_variance=float(v1c),
        complier_control_residual_variance=float(v0c),
        assume_nonneg_corr=bool(assume_nonneg_corr),
        r2_noncompliance=intervals[0],
        r2_compliers=intervals[1],
        r2_combined=intervals[2],
        r2_status=status,
        rho_curve=curve,
    )


def _late_sensitivity_points(
    noncompliance, complier_systematic, complier_share, lower, upper_indep, rho_grid
) -> tuple[LateCurvePoint, ...]:
    rho = np.asarray(rho_grid, dtype=float)
    if rho.ndim != 1:
        raise HetfxError("rho grid must be one-dimensional")
    if ((rho < 0.0) | (rho > 1.0)).any():
        raise HetfxError("rho values must lie in [0, 1]")
    points = []
    for r in rho:
        see = float(r * lower + (1.0 - r) * upper_indep)
        r2_u, r2_c, r2_ux = _late_r2_values(
            noncompliance, complier_systematic, complier_share, see
        )
        points.append(
            LateCurvePoint(
                rho=float(r),
                complier_idiosyncratic_variance=see,
                r2_noncompliance=r2_u,
                r2_compliers=r2_c,
                r2_combined=r2_ux,
            )
        )
    return tuple(points)


def late_r2_sensitivity(decomposition: LateDecomposition, rho_grid) -> tuple[LateCurvePoint, ...]:
    """Recompute the three explained-share measures along a rho grid.

    The complier idiosyncratic variance interpolates linearly between its
    independence value (rho = 0) and its matched-coupling lower bound
    (rho = 1), exactly as in the intention-to-treat sensitivity analysis but
    within the complier stratum.
    """
    return _late_sensitivity_points(
        decomposition.noncompliance_variance,
        decomposition.complier_systematic_variance,
        decomposition.summary.complier_share,
        decomposition.complier_idiosyncratic_lower,
        decomposition.complier_idiosyncratic_upper_independent,
        rho_grid,
    )
