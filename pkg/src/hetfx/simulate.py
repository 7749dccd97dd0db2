"""Synthetic completely randomized experiments and the power-study harness.

The data generator produces four covariates (one standard normal, one fair
coin, one rare coin, one strong normal predictor), a linear control-outcome
model with noise variance 0.26 (unit marginal variance), and per-scenario
effect structure:

  a - constant effect 0.3;
  b - systematic effect 0.2 + 0.1*x1 + 0.4*x3;
  c - constant effect plus idiosyncratic noise (sd 0.2);
  d - systematic effect plus idiosyncratic noise.

The effect model uses the first three covariates; the fourth enters only the
adjustment set.  Assignment is fixed-margin complete randomization with a
0.6 treated share.  Under noncompliance, strata are drawn from a
two-score multinomial logit on (x1, x3) whose intercepts were calibrated
offline to a complier share of 0.68 with always/never shares of 0.13/0.19,
keeping the complier average effect near 0.30 and the overall
intention-to-treat effect near 0.20.  Exclusion is enforced by construction.

Reproducibility: each replication draws from a generator seeded with the
(seed, replication-index) pair, so results are identical bit for bit
regardless of execution order or worker count (``HETFX_THREADS``).
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .compliance import ComplierRIEffects, TSLSEffects
from .dataset import Dataset, PotentialTable
from .estimators import AdjustedRIEffects, OLSEffects, RIEffects
from .exceptions import HetfxError
from .inference import omnibus_test

SCENARIOS = ("a", "b", "c", "d")
ITT_ESTIMATORS = ("RI", "OLS", "RI_adjusted")
LATE_ESTIMATORS = ("RI_complier", "TSLS")

CONTROL_COEF = (0.3, 0.2, 0.3, -0.4, 0.8)  # intercept, x1..x4
NOISE_VAR = 0.26
EFFECT_CONSTANT = 0.3
EFFECT_COEF = (0.2, 0.1, 0.4)  # intercept, x1, x3
IDIOSYNCRATIC_SD = 0.2

# multinomial logit scores vs the complier baseline: intercept, x1, x3
ALWAYS_SCORE = (-1.69, 0.5, -0.4)
NEVER_SCORE = (-1.49, -0.4, 0.5)


@dataclass(frozen=True)
class SimConfig:
    """Settings for one simulation study."""

    scenario: str
    n: int
    reps: int
    seed: int = 0
    treat_prob: float = 0.6
    noncompliance: bool = False
    estimators: tuple[str, ...] = ("RI", "OLS")
    alpha: float = 0.05

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise HetfxError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.n < 50:
            raise HetfxError(f"n must be at least 50, got {self.n}")
        if self.reps < 1:
            raise HetfxError(f"reps must be at least 1, got {self.reps}")
        if not 0.0 < self.treat_prob < 1.0:
            raise HetfxError(f"treat_prob must be in (0, 1), got {self.treat_prob}")
        valid = ITT_ESTIMATORS + LATE_ESTIMATORS
        for name in self.estimators:
            if name not in valid:
                raise HetfxError(f"unknown estimator {name!r}; choose from {valid}")
        if any(name in LATE_ESTIMATORS for name in self.estimators) and not self.noncompliance:
            raise HetfxError(
                "complier estimators require the noncompliance data generator"
            )


def replication_rng(seed: int, rep_index: int) -> np.random.Generator:
    """Independent stream per (seed, replication) via a seed-sequence key."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(rep_index))))


def _base_draws(rng: np.random.Generator, n: int, scenario: str):
    x1 = rng.standard_normal(n)
    x2 = (rng.random(n) < 0.5).astype(float)
    x3 = (rng.random(n) < 0.25).astype(float)
    x4 = rng.standard_normal(n)
    y0 = (
        CONTROL_COEF[0]
        + CONTROL_COEF[1] * x1
        + CONTROL_COEF[2] * x2
        + CONTROL_COEF[3] * x3
        + CONTROL_COEF[4] * x4
        + rng.normal(0.0, np.sqrt(NOISE_VAR), n)
    )
    if scenario in ("a", "c"):
        delta = np.full(n, EFFECT_CONSTANT)
    else:
        delta = EFFECT_COEF[0] + EFFECT_COEF[1] * x1 + EFFECT_COEF[2] * x3
    if scenario in ("c", "d"):
        epsilon = rng.normal(0.0, IDIOSYNCRATIC_SD, n)
    else:
        epsilon = np.zeros(n)
    return x1, x2, x3, x4, y0, delta + epsilon


def _assign(rng: np.random.Generator, n: int, treat_prob: float) -> np.ndarray:
    n1 = int(round(treat_prob * n))
    n1 = min(max(n1, 1), n - 1)
    t = np.zeros(n, dtype=np.int64)
    t[rng.permutation(n)[:n1]] = 1
    return t


def _package(x1, x2, x3, x4, t, y_obs, d_obs=None) -> Dataset:
    return Dataset.from_arrays(
        covariates=np.column_stack([x1, x2, x3]),
        t=t,
        y=y_obs,
        d=d_obs,
        w=np.column_stack([x1, x2, x3, x4]),
        covariate_labels=("x_1", "x_2", "x_3"),
        adjust_labels=("w_1", "w_2", "w_3", "w_4"),
    )


def generate_itt_dataset(config: SimConfig, rep_index: int) -> tuple[Dataset, PotentialTable]:
    """One synthetic experiment without noncompliance."""
    rng = replication_rng(config.seed, rep_index)
    x1, x2, x3, x4, y0, tau = _base_draws(rng, config.n, config.scenario)
    y1 = y0 + tau
    t = _assign(rng, config.n, config.treat_prob)
    table = PotentialTable(y1=y1, y0=y0)
    y_obs, _ = table.observe(t)
    return _package(x1, x2, x3, x4, t, y_obs), table


def generate_late_dataset(config: SimConfig, rep_index: int) -> tuple[Dataset, PotentialTable]:
    """One synthetic experiment with covariate-dependent noncompliance.

    Strata are drawn from the calibrated multinomial logit; exclusion is
    enforced by overwriting the potential outcomes of always-takers and
    never-takers, and monotonicity holds because receipt potentials are set
    directly from the stratum.
    """
    if not config.noncompliance:
        raise HetfxError("config.noncompliance must be set for the noncompliance generator")
    rng = replication_rng(config.seed, rep_index)
    n = config.n
    x1, x2, x3, x4, y0, tau = _base_draws(rng, n, config.scenario)
    y1 = y0 + tau

    score_a = ALWAYS_SCORE[0] + ALWAYS_SCORE[1] * x1 + ALWAYS_SCORE[2] * x3
    score_n = NEVER_SCORE[0] + NEVER_SCORE[1] * x1 + NEVER_SCORE[2] * x3
    za, zn = np.exp(score_a), np.exp(score_n)
    denom = 1.0 + za + zn
    u = rng.random(n)
    is_complier = u < 1.0 / denom
    is_always = (~is_complier) & (u < (1.0 + za) / denom)
    is_never = ~(is_complier | is_always)

    y0 = np.where(is_always, y1, y0)
    y1 = np.where(is_never, y0, y1)
    d1 = (~is_never).astype(np.int64)
    d0 = is_always.astype(np.int64)

    t = _assign(rng, n, config.treat_prob)
    table = PotentialTable(y1=y1, y0=y0, d1=d1, d0=d0)
    y_obs, d_obs = table.observe(t)
    return _package(x1, x2, x3, x4, t, y_obs, d_obs), table


def fit_named_estimator(name: str, dataset: Dataset):
    """Fit one of the named estimators on a dataset; returns the estimate."""
    cov = dataset.covariates
    labels = dataset.x_labels[1:]
    if name == "RI":
        return RIEffects().fit(cov, dataset.y, treatment=dataset.t, labels=labels).estimate_
    if name == "OLS":
        return OLSEffects().fit(cov, dataset.y, treatment=dataset.t, labels=labels).estimate_
    if name == "RI_adjusted":
        return (
            AdjustedRIEffects()
            .fit(
                cov,
                dataset.y,
                treatment=dataset.t,
                adjust=dataset.w,
                labels=labels,
                adjust_labels=dataset.w_labels,
            )
            .estimate_
        )
    if name == "RI_complier":
        return (
            ComplierRIEffects()
            .fit(cov, dataset.y, treatment=dataset.t, receipt=dataset.d, labels=labels)
            .estimate_
        )
    if name == "TSLS":
        return (
            TSLSEffects()
            .fit(cov, dataset.y, treatment=dataset.t, receipt=dataset.d, labels=labels)
            .estimate_
        )
    raise HetfxError(f"unknown estimator {name!r}")


@dataclass(frozen=True)
class EstimatorPower:
    """Rejection-rate summary for one estimator."""

    estimator: str
    rejections: int
    completed: int
    failures: int

    @property
    def rate(self) -> float:
        return self.rejections / self.completed if self.completed else float("nan")

    @property
    def mc_se(self) -> float:
        if not self.completed:
            return float("nan")
        r = self.rate
        return float(np.sqrt(r * (1.0 - r) / self.completed))


@dataclass(frozen=True)
class SimResult:
    """Power-study output: per-estimator rejection rates plus rep seeds."""

    config: SimConfig
    powers: dict[str, EstimatorPower]
    rep_seeds: tuple[tuple[int, int], ...] = field(repr=False)

    def as_record(self) -> dict:
        return {
            "scenario": self.config.scenario,
            "n": self.config.n,
            "reps": self.config.reps,
            "alpha": self.config.alpha,
            "seed": self.config.seed,
            "noncompliance": self.config.noncompliance,
            "estimators": [
                {
                    "estimator": p.estimator,
                    "rejection_rate": p.rate,
                    "mc_se": p.mc_se,
                    "rejections": p.rejections,
                    "completed": p.completed,
                    "failures": p.failures,
                }
                for p in self.powers.values()
            ],
            "rep_seeds": [list(pair) for pair in self.rep_seeds],
        }


def max_workers() -> int:
    """Worker cap from HETFX_THREADS (default 1: serial execution)."""
    raw = os.environ.get("HETFX_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise HetfxError(f"HETFX_THREADS must be an integer, got {raw!r}")
    return max(value, 1)


def _run_replication(config: SimConfig, rep_index: int) -> dict[str, bool | None]:
    generate = generate_late_dataset if config.noncompliance else generate_itt_dataset
    try:
        dataset, _ = generate(config, rep_index)
    except HetfxError:
        # a degenerate draw (e.g. a constant binary covariate at tiny n)
        return {name: None for name in config.estimators}
    outcome: dict[str, bool | None] = {}
    for name in config.estimators:
        try:
            estimate = fit_named_estimator(name, dataset)
            outcome[name] = omnibus_test(estimate, alpha=config.alpha).reject
        except HetfxError:
            outcome[name] = None
    return outcome


def power_study(config: SimConfig) -> SimResult:
    """Rejection rates of the omnibus test across replications.

    Fit failures are counted per estimator and excluded from the rate
    denominator, never silently dropped.  The result is a pure function of
    the config: replications use per-index seed streams and the reduction is
    a commutative count, so worker count cannot change the output.
    """
    workers = max_workers()
    indices = range(config.reps)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda i: _run_replication(config, i), indices))
    else:
        outcomes = [_run_replication(config, i) for i in indices]

    powers = {}
    for name in config.estimators:
        values = [o[name] for o in outcomes]
        failures = sum(v is None for v in values)
        rejections = sum(bool(v) for v in values if v is not None)
        powers[name] = EstimatorPower(
            estimator=name,
            rejections=rejections,
            completed=config.reps - failures,
            failures=failures,
        )
    seeds = tuple((config.seed, i) for i in indices)
    return SimResult(config=config, powers=powers, rep_seeds=seeds)
