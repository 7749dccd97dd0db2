"""Unit-level data containers and CSV ingestion.

CSV schema: header row with ``y`` (outcome), ``t`` (assignment, 0/1),
optional ``d`` (receipt, 0/1), effect covariates prefixed ``x_`` and
adjustment covariates prefixed ``w_``.  UTF-8, comma-delimited, ``.``
decimal.  The intercept column is synthesized internally and the header
``x_intercept`` is reserved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import HetfxError
from .validation import (
    add_intercept,
    as_float_matrix,
    as_float_vector,
    check_treatment,
    default_labels,
    reject_constant_columns,
)

INTERCEPT_LABEL = "intercept"


@dataclass(frozen=True)
class Dataset:
    """Observed unit-level records for one completely randomized experiment.

    ``x`` is the effect design matrix whose first column is the constant 1;
    construct instances through :meth:`from_arrays` or :func:`load_csv`, which
    synthesize that column and validate the rest.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    d: np.ndarray | None = None
    w: np.ndarray | None = None
    x_labels: tuple[str, ...] = ()
    w_labels: tuple[str, ...] = ()

    @classmethod
    def from_arrays(
        cls,
        covariates,
        t,
        y,
        d=None,
        w=None,
        covariate_labels: tuple[str, ...] | None = None,
        adjust_labels: tuple[str, ...] | None = None,
    ) -> "Dataset":
        x = as_float_matrix(covariates, "covariates")
        n = x.shape[0]
        y = as_float_vector(y, "outcome")
        if y.shape[0] != n:
            raise HetfxError(f"outcome has length {y.shape[0]}, expected {n}")
        t, _, _ = check_treatment(t, n)
        labels = tuple(covariate_labels or default_labels(x.shape[1]))
        if len(labels) != x.shape[1]:
            raise HetfxError("covariate_labels length does not match covariates")
        reject_constant_columns(x, labels)
        if d is not None:
            from .validation import as_binary_vector

            d = as_binary_vector(d, "receipt")
            if d.shape[0] != n:
                raise HetfxError(f"receipt has length {d.shape[0]}, expected {n}")
        wl: tuple[str, ...] = ()
        if w is not None:
            w = as_float_matrix(w, "adjustment covariates")
            if w.shape[0] != n:
                raise HetfxError(f"adjustment covariates have {w.shape[0]} rows, expected {n}")
            wl = tuple(adjust_labels or default_labels(w.shape[1], prefix="w"))
            if len(wl) != w.shape[1]:
                raise HetfxError("adjust_labels length does not match adjustment matrix")
        return cls(
            x=add_intercept(x),
            t=t,
            y=y,
            d=d,
            w=w,
            x_labels=(INTERCEPT_LABEL,) + labels,
            w_labels=wl,
        )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @property
    def n1(self) -> int:
        return int(self.t.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def covariates(self) -> np.ndarray:
        """Effect covariates without the intercept column."""
        return self.x[:, 1:]

    def rank_report(self) -> dict:
        """Numerical rank and condition diagnostics for x (and w if present)."""
        out = {"x": _rank_of(self.x)}
        if self.w is not None:
            out["w"] = _rank_of(self.w)
        return out


def _rank_of(a: np.ndarray) -> dict:
    s = np.linalg.svd(a, compute_uv=False)
    tol = s.max(initial=0.0) * max(a.shape) * np.finfo(float).eps
    rank = int((s > tol).sum())
    cond = float(s.max() / s.min()) if s.min() > 0 else float("inf")
    return {"columns": a.shape[1], "rank": rank, "condition": cond}


@dataclass(frozen=True)
class PotentialTable:
    """Complete potential outcomes, used only by oracles and simulators.

    Estimators never see this table.  When receipt potential values are
    present, monotonicity is enforced at construction: a unit that would take
    the treatment under control but not under treatment is invalid.
    """

    y1: np.ndarray
    y0: np.ndarray
    d1: np.ndarray | None = None
    d0: np.ndarray | None = None

    def __post_init__(self):
        y1 = as_float_vector(self.y1, "y1")
        y0 = as_float_vector(self.y0, "y0")
        if y1.shape != y0.shape:
            raise HetfxError("y1 and y0 must have equal length")
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)
        if (self.d1 is None) != (self.d0 is None):
            raise HetfxError("d1 and d0 must be supplied together")
        if self.d1 is not None:
            from .validation import as_binary_vector

            d1 = as_binary_vector(self.d1, "d1")
            d0 = as_binary_vector(self.d0, "d0")
            if d1.shape != y1.shape or d0.shape != y1.shape:
                raise HetfxError("receipt vectors must match outcome length")
            if (d1 < d0).any():
                i = int(np.argwhere(d1 < d0)[0][0])
                raise HetfxError(
                    f"defier at row {i}: receipt under control exceeds receipt "
                    "under treatment (monotonicity violated)"
                )
            object.__setattr__(self, "d1", d1)
            object.__setattr__(self, "d0", d0)

    @property
    def n(self) -> int:
        return self.y1.shape[0]

    @property
    def effects(self) -> np.ndarray:
        return self.y1 - self.y0

    def strata(self) -> np.ndarray:
        """Compliance strata labels 'a', 'n', 'c' per unit."""
        if self.d1 is None:
            raise HetfxError("strata require receipt potential values")
        out = np.full(self.n, "c")
        out[(self.d1 == 1) & (self.d0 == 1)] = "a"
        out[(self.d1 == 0) & (self.d0 == 0)] = "n"
        return out

    def observe(self, t) -> tuple[np.ndarray, np.ndarray | None]:
        """Observed outcome (and receipt, when defined) under assignment t."""
        t, _, _ = check_treatment(t, self.n)
        y_obs = np.where(t == 1, self.y1, self.y0)
        d_obs = None
        if self.d1 is not None:
            d_obs = np.where(t == 1, self.d1, self.d0).astype(np.int64)
        return y_obs, d_obs


RESERVED_HEADER = "x_intercept"


def load_csv(path) -> Dataset:
    """Read a dataset from CSV (schema in the module docstring).

    Column roles come from headers; row order is preserved; the intercept is
    synthesized and prepended.  Non-binary ``t``/``d`` and non-finite values
    are rejected with the offending row named.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    cols = list(frame.columns)
    if "y" not in cols:
        raise HetfxError("CSV is missing required column 'y'")
    if "t" not in cols:
        raise HetfxError("CSV is missing required column 't'")
    if RESERVED_HEADER in cols:
        raise HetfxError(f"column name {RESERVED_HEADER!r} is reserved")
    x_cols = [c for c in cols if c.startswith("x_")]
    w_cols = [c for c in cols if c.startswith("w_")]
    known = {"y", "t", "d"} | set(x_cols) | set(w_cols)
    unknown = [c for c in cols if c not in known]
    if unknown:
        raise HetfxError(
            f"unrecognized column(s) {unknown}; covariates must be prefixed "
            "'x_' (effect model) or 'w_' (adjustment)"
        )
    if not x_cols:
        raise HetfxError("CSV has no effect covariates (columns prefixed 'x_')")

    def binary_column(name: str) -> np.ndarray:
        raw = frame[name].to_numpy()
        out = np.zeros(raw.shape[0], dtype=np.int64)
        for i, v in enumerate(raw):
            if v in (0, 1, 0.0, 1.0):
                out[i] = int(v)
            else:
                raise HetfxError(
                    f"column {name!r} must be 0/1; found {v!r} at row {i}"
                )
        return out

    def numeric_block(names: list[str]) -> np.ndarray:
        block = frame[names].to_numpy(dtype=float)
        bad = ~np.isfinite(block)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise HetfxError(
                f"non-finite value at row {r}, column {names[c]!r}"
            )
        return block

    y = numeric_block(["y"])[:, 0]
    t = binary_column("t")
    d = binary_column("d") if "d" in cols else None
    x = numeric_block(x_cols)
    w = numeric_block(w_cols) if w_cols else None
    return Dataset.from_arrays(
        covariates=x,
        t=t,
        y=y,
        d=d,
        w=w,
        covariate_labels=tuple(x_cols),
        adjust_labels=tuple(w_cols) if w_cols else None,
    )


def write_csv(dataset: Dataset, path) -> None:
    """Write a dataset back to the CSV schema read by :func:`load_csv`."""
    data: dict[str, np.ndarray] = {"y": dataset.y, "t": dataset.t}
    if dataset.d is not None:
        data["d"] = dataset.d
    cov = dataset.covariates
    for j, label in enumerate(dataset.x_labels[1:]):
        name = label if label.startswith("x_") else f"x_{label}"
        data[name] = cov[:, j]
    if dataset.w is not None:
        for j, label in enumerate(dataset.w_labels):
            name = label if label.startswith("w_") else f"w_{label}"
            data[name] = dataset.w[:, j]
    pd.DataFrame(data).to_csv(path, index=False)
