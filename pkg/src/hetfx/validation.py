"""Input validation helpers.

All estimators funnel their inputs through these checks so that error
messages are uniform and every array downstream is a finite float ndarray.
"""
from __future__ import annotations

import numpy as np

from .exceptions import HetfxError, InsufficientDataError


def as_float_matrix(values, name: str) -> np.ndarray:
    """Coerce to a 2-D float array and reject non-finite entries."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise HetfxError(f"{name} must be two-dimensional, got ndim={arr.ndim}")
    bad = ~np.isfinite(arr)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise HetfxError(f"{name} has a non-finite value at row {row}, column {col}")
    return arr


def as_float_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise HetfxError(f"{name} must be one-dimensional, got ndim={arr.ndim}")
    bad = ~np.isfinite(arr)
    if bad.any():
        raise HetfxError(f"{name} has a non-finite value at row {np.argwhere(bad)[0][0]}")
    return arr


def as_binary_vector(values, name: str) -> np.ndarray:
    """Coerce to an int 0/1 vector, rejecting anything else."""
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise HetfxError(f"{name} must be one-dimensional")
    out = np.zeros(arr.shape[0], dtype=np.int64)
    for i, v in enumerate(arr):
        if v == 0 or v == 1:
            out[i] = int(v)
        else:
            raise HetfxError(f"{name} must be 0/1; found {v!r} at row {i}")
    return out


def check_treatment(t, n: int) -> tuple[np.ndarray, int, int]:
    """Validate an assignment vector; both arms must be non-empty."""
    t = as_binary_vector(t, "treatment")
    if t.shape[0] != n:
        raise HetfxError(f"treatment has length {t.shape[0]}, expected {n}")
    n1 = int(t.sum())
    n0 = n - n1
    if n1 == 0 or n0 == 0:
        raise InsufficientDataError(
            f"both arms must be non-empty (n1={n1}, n0={n0})"
        )
    return t, n1, n0


def check_arm_size(size: int, minimum: int, what: str) -> None:
    if size < minimum:
        raise InsufficientDataError(f"{what} has {size} units; need at least {minimum}")


def reject_constant_columns(x: np.ndarray, labels: tuple[str, ...]) -> None:
    """The library owns the intercept; a constant covariate column would
    double-count it."""
    if x.shape[0] == 0:
        return
    constant = np.all(x == x[0, :], axis=0)
    if constant.any():
        names = [labels[j] for j in np.flatnonzero(constant)]
        raise HetfxError(
            "constant covariate column(s) "
            f"{names}: the intercept is added internally, remove them"
        )


def add_intercept(x: np.ndarray) -> np.ndarray:
    """Prepend the constant-1 column to a covariate matrix."""
    return np.column_stack([np.ones(x.shape[0]), x])


def default_labels(k: int, prefix: str = "x") -> tuple[str, ...]:
    return tuple(f"{prefix}{j + 1}" for j in range(k))
