"""Acceptance suite.

One test per criterion, each printing a PASS/FAIL line (visible with -s or
in captured output).  Monte-Carlo criteria use pinned seeds, so the suite is
deterministic; the stated tolerances are asserted as-is.
"""
import math
import time

import numpy as np
import pytest

import hetfx
from helpers import all_assignments, interacted_normal_equations, population_beta
from hetfx import (
    OLSEffects,
    RIEffects,
    SimConfig,
    fisher_confidence_region,
    fit_complier_ri,
    fit_ols,
    fit_ri,
    fit_tsls,
    generate_itt_dataset,
    generate_late_dataset,
    power_study,
    quantile_integral,
)
from hetfx.compliance import _cell_moment_diffs


def report(number: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {number:02d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def test_c01_exhaustive_unbiasedness_of_effect_and_coefficient():
    start = time.time()
    rng = np.random.default_rng(101)
    worst_tau = worst_beta = 0.0
    for _ in range(20):
        x = rng.standard_normal((6, 1))
        design = np.column_stack([np.ones(6), x])
        y0 = rng.standard_normal(6)
        y1 = y0 + design @ rng.standard_normal(2) + 0.3 * rng.standard_normal(6)
        truth_tau = (y1 - y0).mean()
        truth_beta = population_beta(design, y1 - y0)
        taus, betas = [], []
        for t in all_assignments(6, 3):
            y_obs = np.where(t == 1, y1, y0)
            est, _ = hetfx.difference_in_means(y_obs[:, None], t)
            taus.append(est[0])
            betas.append(fit_ri(x, y_obs, t).beta)
        worst_tau = max(worst_tau, abs(np.mean(taus) - truth_tau))
        worst_beta = max(worst_beta, np.abs(np.mean(betas, axis=0) - truth_beta).max())
    elapsed = time.time() - start
    ok = worst_tau < 1e-10 and worst_beta < 1e-10 and elapsed < 1.0
    report(1, ok, f"max dev tau {worst_tau:.2e}, beta {worst_beta:.2e}, {elapsed:.2f}s")


def test_c02_intercept_only_recovers_classic_mean_difference():
    rng = np.random.default_rng(102)
    y = rng.standard_normal(16)
    t = np.array([1] * 7 + [0] * 9)
    est = fit_ri(np.empty((16, 0)), y, t)
    want_beta = y[t == 1].mean() - y[t == 0].mean()
    want_var = np.var(y[t == 1], ddof=1) / 7 + np.var(y[t == 0], ddof=1) / 9
    ok = abs(est.beta[0] - want_beta) < 1e-12 and abs(est.cov[0, 0] - want_var) < 1e-12
    report(2, ok, f"beta dev {abs(est.beta[0]-want_beta):.2e}, var dev {abs(est.cov[0,0]-want_var):.2e}")


def test_c03_interacted_normal_equation_oracle():
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal((50, 3))
        t = np.zeros(50, dtype=int)
        t[rng.permutation(50)[:28]] = 1
        y = rng.standard_normal(50)
        est = fit_ols(x, y, t)
        design = np.column_stack([np.ones(50), x])
        want = interacted_normal_equations(design, y, t)
        worst = max(worst, np.abs(est.beta - want).max())
    report(3, worst < 1e-9, f"max coefficient deviation {worst:.2e}")


def test_c04_frechet_bound_oracles_and_ordering():
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(3, 30))
        a = rng.standard_normal(m)
        b = rng.standard_normal(m)
        a, b = a - a.mean(), b - b.mean()
        lower = quantile_integral(a, b, "matched")
        upper = quantile_integral(a, b, "antimatched")
        worst = max(worst, abs(lower - np.var(np.sort(a) - np.sort(b))))
        worst = max(worst, abs(upper - np.var(np.sort(a) - np.sort(b)[::-1])))
    violations = 0
    for _ in range(1000):
        a = rng.standard_normal(int(rng.integers(2, 25)))
        b = rng.standard_normal(int(rng.integers(2, 25)))
        a, b = a - a.mean(), b - b.mean()
        lower = quantile_integral(a, b, "matched")
        upper = quantile_integral(a, b, "antimatched")
        independent = a @ a / a.size + b @ b / b.size
        if not (lower <= independent + 1e-12 and independent <= upper + 1e-12):
            violations += 1
    ok = worst < 1e-12 and violations == 0
    report(4, ok, f"pairing-oracle dev {worst:.2e}, ordering violations {violations}/1000")


def test_c05_sensitivity_linearity_and_monotonicity():
    rng = np.random.default_rng(105)
    x = rng.standard_normal((200, 2))
    t = np.zeros(200, dtype=int)
    t[rng.permutation(200)[:120]] = 1
    y = x @ [0.4, -0.2] + t * (0.3 + x @ [0.5, 0.2]) + rng.standard_normal(200)
    dec = hetfx.decompose_itt(x, y, t, fit_ols(x, y, t))
    points = hetfx.sensitivity_curve(dec, [0.0, 0.5, 1.0])
    midpoint_dev = abs(
        points[1].idiosyncratic_variance
        - (points[0].idiosyncratic_variance + points[2].idiosyncratic_variance) / 2.0
    )
    grid = [p.r_squared for p in hetfx.sensitivity_curve(dec, np.linspace(0, 1, 21))]
    increasing = all(b > a for a, b in zip(grid, grid[1:]))
    ok = (
        midpoint_dev < 1e-12
        and dec.systematic_variance > 0
        and dec.idiosyncratic_lower < dec.idiosyncratic_upper_independent
        and increasing
    )
    report(5, ok, f"midpoint dev {midpoint_dev:.2e}, strictly increasing {increasing}")


def test_c06_variance_bound_strictly_tighter():
    rng = np.random.default_rng(106)
    checked = 0
    for _ in range(25):
        n = int(rng.integers(40, 200))
        x = rng.standard_normal((n, 2))
        t = np.zeros(n, dtype=int)
        t[rng.permutation(n)[: int(0.6 * n)]] = 1
        y = x @ [0.3, 0.2] + t * (0.2 + x @ [0.6, -0.4]) + rng.standard_normal(n)
        dec = hetfx.decompose_itt(x, y, t, fit_ols(x, y, t))
        if dec.systematic_variance <= 0:
            continue
        bounds = hetfx.var_tau_bounds(y, t, dec)
        assert bounds.upper < bounds.neyman_conservative
        checked += 1
    report(6, checked > 0, f"strict tightening held on all {checked} positive-signal datasets")


def test_c07_tsls_reductions_and_oracles():
    rng = np.random.default_rng(107)
    x = rng.standard_normal((40, 2))
    t = np.array([1, 0] * 20)
    y = rng.standard_normal(40)
    full_dev = np.abs(fit_tsls(x, y, t, t).beta - fit_ols(x, y, t).beta).max()

    worst_eq = worst_schur = 0.0
    for _ in range(20):
        n = 120
        x = rng.standard_normal((n, 2))
        design = np.column_stack([np.ones(n), x])
        y0 = design @ np.array([0.4, 0.6, -0.2]) + rng.standard_normal(n)
        tau = design @ np.array([0.3, 0.2, 0.1]) + 0.2 * rng.standard_normal(n)
        u = rng.random(n)
        always, never = u < 0.15, (u >= 0.15) & (u < 0.4)
        tau = np.where(always | never, 0.0, tau)
        y1 = y0 + tau
        d1 = (~never).astype(int)
        d0 = always.astype(int)
        t = np.zeros(n, dtype=int)
        t[rng.permutation(n)[:70]] = 1
        y_obs = np.where(t == 1, y1, y0)
        d_obs = np.where(t == 1, d1, d0)
        est = fit_tsls(x, y_obs, t, d_obs)
        resid = y_obs - design @ est.gamma_infinity - d_obs * (design @ est.beta)
        eq = np.concatenate([design.T @ resid, (t[:, None] * design).T @ resid]) / n
        worst_eq = max(worst_eq, np.abs(eq).max())
        a = design.T @ design / n
        b = design.T @ (d_obs[:, None] * design) / n
        c = design.T @ (t[:, None] * design) / n
        dd = design.T @ ((t * d_obs)[:, None] * design) / n
        g = design.T @ y_obs / n
        h = design.T @ (t * y_obs) / n
        schur = dd - c @ np.linalg.solve(a, b)
        beta = np.linalg.solve(schur, h - c @ np.linalg.solve(a, g))
        worst_schur = max(worst_schur, np.abs(est.beta - beta).max())
    ok = full_dev < 1e-10 and worst_eq < 1e-10 and worst_schur < 1e-10
    report(7, ok, f"full-compliance dev {full_dev:.2e}, eq residual {worst_eq:.2e}, schur dev {worst_schur:.2e}")


def test_c08_three_part_variation_identity():
    rng = np.random.default_rng(108)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(20, 60))
        y0 = rng.standard_normal(n)
        tau = rng.standard_normal(n)
        u = rng.random(n)
        always, never = u < 0.2, (u >= 0.2) & (u < 0.45)
        complier = ~(always | never)
        tau = np.where(complier, tau, 0.0)
        pi_c = complier.mean()
        tau_c = tau[complier].mean()
        s_tau = float(np.var(tau))
        s_tau_c = float(np.var(tau[complier]))
        s_tau_u = pi_c * (1 - pi_c) * tau_c**2
        worst = max(worst, abs(s_tau - (pi_c * s_tau_c + s_tau_u)))
    report(8, worst < 1e-10, f"max identity deviation {worst:.2e}")


def test_c09_simulation_validity_at_reference_size():
    start = time.time()
    result = power_study(
        SimConfig(scenario="a", n=3586, reps=2000, seed=20250810,
                  estimators=("RI", "OLS", "RI_adjusted"))
    )
    rates = {name: p.rate for name, p in result.powers.items()}
    elapsed = time.time() - start
    ok = all(0.03 <= rate <= 0.07 for rate in rates.values()) and elapsed < 300
    detail = ", ".join(f"{k} {v:.4f}" for k, v in rates.items())
    report(9, ok, f"{detail} (window [0.03, 0.07], {elapsed:.0f}s)")


def test_c10_power_ordering_and_monotonicity():
    sizes = (500, 1000, 2000, 3586)
    ok = True
    details = []
    for scenario in ("b", "d"):
        rates = {}
        for n in sizes:
            result = power_study(
                SimConfig(scenario=scenario, n=n, reps=1000, seed=1000 + n,
                          estimators=("RI", "OLS"))
            )
            rates[n] = {name: (p.rate, p.mc_se) for name, p in result.powers.items()}
        for n in sizes:
            ols_rate, ols_se = rates[n]["OLS"]
            ri_rate, ri_se = rates[n]["RI"]
            if ols_rate < ri_rate - 2 * math.hypot(ols_se, ri_se):
                ok = False
        for name in ("RI", "OLS"):
            seq = [rates[n][name] for n in sizes]
            for (r_lo, se_lo), (r_hi, se_hi) in zip(seq, seq[1:]):
                if r_hi < r_lo - 2 * math.hypot(se_lo, se_hi):
                    ok = False
        details.append(
            scenario + ": " + " ".join(f"{n}:{rates[n]['OLS'][0]:.3f}/{rates[n]['RI'][0]:.3f}" for n in sizes)
        )
    report(10, ok, "OLS/RI power " + "; ".join(details))


def test_c11_small_sample_anticonservativeness():
    result = power_study(
        SimConfig(scenario="a", n=200, reps=2000, seed=11, estimators=("OLS",))
    )
    rate = result.powers["OLS"].rate
    report(11, 0.06 <= rate <= 0.12, f"OLS rejection {rate:.4f} (window [0.06, 0.12])")


def test_c12_late_calibration_and_power_reduction():
    cfg = SimConfig(scenario="b", n=100_000, reps=1, seed=12, noncompliance=True,
                    estimators=("RI_complier",))
    _, table = generate_late_dataset(cfg, 0)
    strata = table.strata()
    share = float((strata == "c").mean())
    cace = float(table.effects[strata == "c"].mean())
    itt = float(table.effects.mean())
    calibrated = (
        abs(share - 0.68) <= 0.02 and abs(cace - 0.30) <= 0.03 and abs(itt - 0.21) <= 0.03
    )

    late = power_study(SimConfig(scenario="b", n=2000, reps=1000, seed=121,
                                 noncompliance=True, estimators=("RI_complier", "TSLS")))
    full = power_study(SimConfig(scenario="b", n=2000, reps=1000, seed=121,
                                 estimators=("RI", "OLS")))
    pairs = (("RI_complier", "RI"), ("TSLS", "OLS"))
    reduced = True
    for late_name, itt_name in pairs:
        lp, ip = late.powers[late_name], full.powers[itt_name]
        if lp.rate > ip.rate + 2 * math.hypot(lp.mc_se, ip.mc_se):
            reduced = False
    ok = calibrated and reduced
    report(
        12,
        ok,
        f"share {share:.4f}, CACE {cace:.4f}, ITT {itt:.4f}; "
        f"late power {late.powers['TSLS'].rate:.3f} <= itt power {full.powers['OLS'].rate:.3f}",
    )


def test_c13_fisher_exactness_and_coverage():
    true_beta = np.array([0.3, 0.15])
    outer = 1000
    covered = 0
    for rep in range(outer):
        rng = np.random.default_rng((13, rep))
        n = 60
        x = rng.standard_normal((n, 1))
        design = np.column_stack([np.ones(n), x])
        y0 = 0.5 + 0.4 * x[:, 0] + rng.standard_normal(n)
        y1 = y0 + design @ true_beta
        t = np.zeros(n, dtype=int)
        t[rng.permutation(n)[:36]] = 1
        y = np.where(t == 1, y1, y0)
        region = fisher_confidence_region(
            x, y, t, [true_beta], alpha=0.05, draws=199, seed=int(rng.integers(2**32))
        )
        covered += bool(region.accepted[0])
    rejection = 1.0 - covered / outer
    coverage = covered / outer
    ok = 0.03 <= rejection <= 0.07 and coverage >= 0.93
    report(13, ok, f"sharp-null rejection {rejection:.4f} (window [0.03, 0.07]), coverage {coverage:.4f}")


def test_c14_variance_ratio_test_size():
    reps = 2000
    rejections = 0
    for rep in range(reps):
        rng = np.random.default_rng((14, rep))
        n = 200
        x = rng.standard_normal((n, 2))
        t = np.zeros(n, dtype=int)
        t[rng.permutation(n)[:120]] = 1
        y = rng.standard_normal(n)
        est = RIEffects().fit(x, y, treatment=t).estimate_
        rejections += hetfx.variance_ratio_test(x, y, t, est, alpha=0.05).reject
    rate = rejections / reps
    cap = 0.05 + 2 * math.sqrt(0.05 * 0.95 / reps)
    report(14, rate <= cap, f"null rejection {rate:.4f} <= {cap:.4f}")


def test_c15_scenario_d_explained_share_sanity():
    true_idiosyncratic = 0.2**2
    values = []
    for rep in range(200):
        ds, _ = generate_itt_dataset(SimConfig(scenario="d", n=3586, reps=200, seed=15), rep)
        est = OLSEffects().fit(ds.covariates, ds.y, treatment=ds.t).estimate_
        systematic = float(np.var(ds.x @ est.beta))
        values.append(systematic / (systematic + true_idiosyncratic))
    mean_r2 = float(np.mean(values))
    report(15, 0.4 <= mean_r2 <= 0.6, f"implied R2 at true idiosyncratic variance: {mean_r2:.4f}")
