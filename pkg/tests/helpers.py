"""Shared oracles for the test suite.

Everything here is deliberately naive (loops, enumeration, direct algebra)
and independent of the library's computation paths.
"""
from __future__ import annotations

import itertools

import numpy as np


def all_assignments(n: int, n1: int) -> np.ndarray:
    """Every fixed-margin assignment vector, one per row."""
    rows = []
    for combo in itertools.combinations(range(n), n1):
        t = np.zeros(n, dtype=np.int64)
        t[list(combo)] = 1
        rows.append(t)
    return np.array(rows)


def covariance_double_loop(rows: np.ndarray) -> np.ndarray:
    """Brute-force covariance operator with divisor n - 1."""
    rows = np.asarray(rows, dtype=float)
    n, k = rows.shape
    mean = rows.mean(axis=0)
    out = np.zeros((k, k))
    for i in range(n):
        dev = rows[i] - mean
        for a in range(k):
            for b in range(k):
                out[a, b] += dev[a] * dev[b]
    return out / (n - 1)


def population_beta(design: np.ndarray, effects: np.ndarray) -> np.ndarray:
    """Full-knowledge least-squares coefficient of effects on the design."""
    return np.linalg.solve(design.T @ design, design.T @ effects)


def population_gammas(design, y1, y0):
    g1 = np.linalg.solve(design.T @ design, design.T @ y1)
    g0 = np.linalg.solve(design.T @ design, design.T @ y0)
    return g1, g0


def interacted_normal_equations(design, y, t):
    """Solve the fully interacted regression directly; return the interaction block."""
    z = np.column_stack([design, t[:, None] * design])
    coef, *_ = np.linalg.lstsq(z, y, rcond=None)
    k = design.shape[1]
    return coef[k:]


def random_table(rng, n: int, n_covariates: int = 1):
    """A random complete potential-outcome table with its design matrix."""
    x = rng.standard_normal((n, n_covariates))
    design = np.column_stack([np.ones(n), x])
    y0 = rng.standard_normal(n) + design @ rng.standard_normal(n_covariates + 1)
    tau = design @ rng.standard_normal(n_covariates + 1) + 0.5 * rng.standard_normal(n)
    y1 = y0 + tau
    return x, design, y1, y0


def random_strata_table(rng, n: int, n_covariates: int = 1):
    """A random complete table with compliance strata (no defiers).

    Exclusion is enforced: always-takers and never-takers have zero effects.
    """
    x = rng.standard_normal((n, n_covariates))
    design = np.column_stack([np.ones(n), x])
    y0 = rng.standard_normal(n) + design @ rng.standard_normal(n_covariates + 1)
    tau = design @ rng.standard_normal(n_covariates + 1) + 0.3 * rng.standard_normal(n)
    u = rng.random(n)
    is_always = u < 0.2
    is_never = (u >= 0.2) & (u < 0.45)
    is_complier = ~(is_always | is_never)
    tau = np.where(is_complier, tau, 0.0)
    y1 = y0 + tau
    d1 = (~is_never).astype(np.int64)
    d0 = is_always.astype(np.int64)
    return x, design, y1, y0, d1, d0, is_complier


def subset_variance(values: np.ndarray, divisor_n: bool = True) -> float:
    values = np.asarray(values, dtype=float)
    mean = values.mean()
    ss = float(((values - mean) ** 2).sum())
    return ss / len(values) if divisor_n else ss / (len(values) - 1)
