"""Batch command-line front end.

Subcommands: ``analyze-itt``, ``analyze-late``, ``decompose``, ``simulate``,
``fisher-cr``.  Reports are a single stable-schema JSON object
(``report_schema.json`` ships with the package) or one tidy CSV table per
section.  Warnings never change the exit status; hard errors exit nonzero
with a machine-readable code on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .compliance import decompose_late, late_r2_sensitivity
from .dataset import Dataset, load_csv
from .decomposition import decompose_itt, sensitivity_curve, var_tau_bounds, variance_ratio_test
from .exceptions import HetfxError
from .inference import (
    coordinate_grid_candidates,
    fisher_confidence_region,
    omnibus_test,
)
from .simulate import ITT_ESTIMATORS, LATE_ESTIMATORS, SimConfig, fit_named_estimator, power_study

SCHEMA_VERSION = "1"
CLI_TO_ESTIMATOR = {
    "ri": "RI",
    "ols": "OLS",
    "ri-adjusted": "RI_adjusted",
    "ri-complier": "RI_complier",
    "tsls": "TSLS",
}
ITT_CHOICES = ("ri", "ols", "ri-adjusted")
LATE_CHOICES = ("ri-complier", "tsls")


def _float17(value: float) -> str:
    return format(value, ".17g")


def _sanitize(value):
    """JSON-safe scalars: numpy types to Python, non-finite floats to None."""
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    return value


def _vector(arr) -> list:
    return [_sanitize(v) for v in np.asarray(arr).ravel().tolist()]


def _matrix(arr) -> list:
    return [[_sanitize(v) for v in row] for row in np.asarray(arr).tolist()]


def _estimate_block(estimate) -> dict:
    block = {
        "method": estimate.method,
        "labels": list(estimate.labels),
        "beta": _vector(estimate.beta),
        "std_errors": _vector(estimate.std_errors),
        "cov": _matrix(estimate.cov),
    }
    for name, attr in (
        ("gamma1", "gamma1"),
        ("gamma0", "gamma0"),
        ("gamma1", "gamma_1c"),
        ("gamma0", "gamma_0c"),
        ("gamma_infinity", "gamma_infinity"),
    ):
        value = getattr(estimate, attr, None)
        if value is not None:
            block[name] = _vector(value)
    return block


def _test_block(result) -> dict:
    return {
        "name": result.name,
        "method": result.method,
        "statistic": _sanitize(result.statistic),
        "df": result.df,
        "draws": result.draws,
        "p_value": _sanitize(result.p_value),
        "alpha": _sanitize(result.alpha),
        "reject": bool(result.reject),
        "reference": result.reference,
    }


def _compliance_block(summary) -> dict:
    return {
        "counts": [[int(v) for v in row] for row in summary.counts],
        "always_share": _sanitize(summary.always_share),
        "never_share": _sanitize(summary.never_share),
        "complier_share": _sanitize(summary.complier_share),
        "strong_instrument": bool(summary.strong_instrument),
    }


def _decomposition_block(dec) -> dict:
    return {
        "method": dec.method,
        "systematic_variance": _sanitize(dec.systematic_variance),
        "idiosyncratic_lower": _sanitize(dec.idiosyncratic_lower),
        "idiosyncratic_upper_independent": _sanitize(dec.idiosyncratic_upper_independent),
        "idiosyncratic_upper_frechet": _sanitize(dec.idiosyncratic_upper_frechet),
        "treated_residual_variance": _sanitize(dec.treated_residual_variance),
        "control_residual_variance": _sanitize(dec.control_residual_variance),
        "assume_nonneg_corr": dec.assume_nonneg_corr,
        "r2_lower": _sanitize(dec.r2_lower),
        "r2_upper": _sanitize(dec.r2_upper),
        "r2_status": dec.r2_status,
        "rho_curve": [
            {
                "rho": _sanitize(p.rho),
                "idiosyncratic_variance": _sanitize(p.idiosyncratic_variance),
                "r_squared": _sanitize(p.r_squared),
            }
            for p in dec.rho_curve
        ],
    }


def _interval_block(interval):
    if interval is None:
        return None
    return {"lower": _sanitize(interval.lower), "upper": _sanitize(interval.upper)}


def _late_decomposition_block(dec) -> dict:
    return {
        "method": dec.method,
        "complier_average_effect": _sanitize(dec.complier_average_effect),
        "noncompliance_variance": _sanitize(dec.noncompliance_variance),
        "complier_systematic_variance": _sanitize(dec.complier_systematic_variance),
        "systematic_clamped": dec.systematic_clamped,
        "complier_idiosyncratic_lower": _sanitize(dec.complier_idiosyncratic_lower),
        "complier_idiosyncratic_upper_independent": _sanitize(
            dec.complier_idiosyncratic_upper_independent
        ),
        "complier_idiosyncratic_upper_frechet": _sanitize(
            dec.complier_idiosyncratic_upper_frechet
        ),
        "complier_treated_residual_variance": _sanitize(
            dec.complier_treated_residual_variance
        ),
        "complier_control_residual_variance": _sanitize(
            dec.complier_control_residual_variance
        ),
        "assume_nonneg_corr": dec.assume_nonneg_corr,
        "r2_noncompliance": _interval_block(dec.r2_noncompliance),
        "r2_compliers": _interval_block(dec.r2_compliers),
        "r2_combined": _interval_block(dec.r2_combined),
        "r2_status": dec.r2_status,
        "rho_curve": [
            {
                "rho": _sanitize(p.rho),
                "complier_idiosyncratic_variance": _sanitize(
                    p.complier_idiosyncratic_variance
                ),
                "r2_noncompliance": _sanitize(p.r2_noncompliance),
                "r2_compliers": _sanitize(p.r2_compliers),
                "r2_combined": _sanitize(p.r2_combined),
            }
            for p in dec.rho_curve
        ],
    }


def parse_rho_grid(spec: str) -> np.ndarray:
    """Parse ``a:b:step`` into an inclusive grid inside [0, 1]."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise HetfxError(f"rho grid must be 'a:b:step', got {spec!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise HetfxError(f"rho grid must be numeric 'a:b:step', got {spec!r}")
    if step <= 0 or not 0.0 <= start <= stop <= 1.0:
        raise HetfxError(f"rho grid must satisfy 0 <= a <= b <= 1 and step > 0, got {spec!r}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    grid = start + step * np.arange(count)
    return np.clip(grid, 0.0, 1.0)


def _base_report(command: str, config: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": {k: _sanitize(v) for k, v in config.items()},
        "warnings": [],
    }


def _warn(report: dict, code: str, message: str) -> None:
    report["warnings"].append({"code": code, "message": message})


def _fit_for_cli(name: str, dataset: Dataset):
    return fit_named_estimator(CLI_TO_ESTIMATOR[name], dataset)


def run_analyze_itt(args) -> dict:
    dataset = load_csv(args.input)
    estimators = args.estimator or []
    report = _base_report(
        "analyze-itt",
        {"input": str(args.input), "alpha": args.alpha, "estimators": estimators},
    )
    report["estimates"] = []
    report["tests"] = []
    if not estimators:
        _warn(report, "no_estimators", "no estimators requested; nothing to do")
        return report
    for name in estimators:
        estimate = _fit_for_cli(name, dataset)
        report["estimates"].append(_estimate_block(estimate))
        report["tests"].append(_test_block(omnibus_test(estimate, alpha=args.alpha)))
        report["tests"].append(
            _test_block(
                variance_ratio_test(
                    dataset.covariates, dataset.y, dataset.t, estimate, alpha=args.alpha
                )
            )
        )
    return report


def run_analyze_late(args) -> dict:
    dataset = load_csv(args.input)
    estimators = args.estimator or []
    report = _base_report(
        "analyze-late",
        {"input": str(args.input), "alpha": args.alpha, "estimators": estimators},
    )
    from .compliance import compliance_proportions

    summary = compliance_proportions(dataset.t, dataset.d)
    report["compliance"] = _compliance_block(summary)
    if not summary.strong_instrument:
        _warn(
            report,
            "weak_instrument",
            f"estimated complier share {summary.complier_share:.4f} is below 0.05",
        )
    report["estimates"] = []
    report["tests"] = []
    if not estimators:
        _warn(report, "no_estimators", "no estimators requested; nothing to do")
        return report
    for name in estimators:
        estimate = _fit_for_cli(name, dataset)
        report["estimates"].append(_estimate_block(estimate))
        report["tests"].append(_test_block(omnibus_test(estimate, alpha=args.alpha)))
    return report


def run_decompose(args) -> dict:
    dataset = load_csv(args.input)
    name = args.estimator[0] if args.estimator else "ri"
    rho_grid = parse_rho_grid(args.rho_grid)
    report = _base_report(
        "decompose",
        {
            "input": str(args.input),
            "estimator": name,
            "rho_grid": args.rho_grid,
            "nonneg_corr": bool(args.nonneg_corr),
        },
    )
    estimate = _fit_for_cli(name, dataset)
    report["estimates"] = [_estimate_block(estimate)]
    if name in LATE_CHOICES:
        dec = decompose_late(
            dataset.covariates,
            dataset.y,
            dataset.t,
            dataset.d,
            estimate,
            assume_nonneg_corr=args.nonneg_corr,
            rho_grid=rho_grid,
        )
        report["compliance"] = _compliance_block(dec.summary)
        report["late_decomposition"] = _late_decomposition_block(dec)
        if dec.systematic_clamped:
            _warn(
                report,
                "clamped",
                "complier systematic variance plug-in was negative; clamped to 0",
            )
        if dec.r2_status != "ok":
            _warn(report, "undefined_r2", "total effect variation is zero; R2 is 0/0")
        if not dec.summary.strong_instrument:
            _warn(
                report,
                "weak_instrument",
                f"estimated complier share {dec.summary.complier_share:.4f} is below 0.05",
            )
    else:
        dec = decompose_itt(
            dataset.covariates,
            dataset.y,
            dataset.t,
            estimate,
            assume_nonneg_corr=args.nonneg_corr,
            rho_grid=rho_grid,
        )
        report["decomposition"] = _decomposition_block(dec)
        bounds = var_tau_bounds(dataset.y, dataset.t, dec)
        report["variance_bounds"] = {
            "lower": _sanitize(bounds.lower),
            "upper": _sanitize(bounds.upper),
            "neyman_conservative": _sanitize(bounds.neyman_conservative),
            "clamped": bounds.clamped,
        }
        if bounds.clamped:
            _warn(report, "clamped", "a variance bound was negative; clamped to 0")
        if dec.r2_status != "ok":
            _warn(report, "undefined_r2", "systematic and idiosyncratic variation are both zero; R2 is 0/0")
    return report


def run_simulate(args) -> dict:
    estimators = tuple(CLI_TO_ESTIMATOR[e] for e in (args.estimator or []))
    noncompliance = any(e in LATE_ESTIMATORS for e in estimators)
    report = _base_report(
        "simulate",
        {
            "scenario": args.scenario,
            "n": args.n,
            "reps": args.reps,
            "seed": args.seed,
            "alpha": args.alpha,
            "estimators": list(args.estimator or []),
        },
    )
    if not estimators:
        _warn(report, "no_estimators", "no estimators requested; nothing to do")
        report["simulation"] = None
        return report
    config = SimConfig(
        scenario=args.scenario,
        n=args.n,
        reps=args.reps,
        seed=args.seed,
        noncompliance=noncompliance,
        estimators=estimators,
        alpha=args.alpha,
    )
    result = power_study(config)
    record = result.as_record()
    record["estimators"] = [
        {k: _sanitize(v) for k, v in row.items()} for row in record["estimators"]
    ]
    report["simulation"] = record
    for power in result.powers.values():
        if power.failures:
            _warn(
                report,
                "fit_failures",
                f"{power.estimator}: {power.failures} of {config.reps} replications failed to fit",
            )
    return report


def run_fisher_cr(args) -> dict:
    dataset = load_csv(args.input)
    name = args.estimator[0] if args.estimator else "ri"
    report = _base_report(
        "fisher-cr",
        {
            "input": str(args.input),
            "estimator": name,
            "alpha": args.alpha,
            "draws": args.draws,
            "seed": args.seed,
            "statistic": args.statistic,
            "grid_points": args.grid_points,
        },
    )
    estimate = _fit_for_cli(name, dataset)
    report["estimates"] = [_estimate_block(estimate)]
    candidates = coordinate_grid_candidates(estimate, num=args.grid_points)
    region = fisher_confidence_region(
        dataset.covariates,
        dataset.y,
        dataset.t,
        candidates,
        alpha=args.alpha,
        statistic=args.statistic,
        draws=args.draws,
        seed=args.seed,
    )
    report["confidence_region"] = {
        "statistic": region.statistic,
        "alpha": _sanitize(region.alpha),
        "draws": int(region.draws),
        "candidates": _matrix(region.candidates),
        "p_values": _vector(region.p_values),
        "accepted": [bool(v) for v in region.accepted],
        "no_variation_accepted": region.no_variation_accepted(),
    }
    return report


def _write_csv_table(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [
                    _float17(v) if isinstance(v, float) else ("" if v is None else v)
                    for v in row
                ]
            )


def _csv_sections(report: dict, base: Path) -> list[Path]:
    """One tidy CSV table per report section, named <stem>.<section>.csv."""
    stem = base.with_suffix("")
    written = []

    def table(section: str, header: list[str], rows: list[list]):
        path = Path(f"{stem}.{section}.csv")
        _write_csv_table(path, header, rows)
        written.append(path)

    if report.get("estimates"):
        rows = []
        for est in report["estimates"]:
            for label, b, se in zip(est["labels"], est["beta"], est["std_errors"]):
                rows.append([est["method"], label, b, se])
        table("estimates", ["method", "coefficient", "estimate", "std_error"], rows)
    if report.get("tests"):
        rows = [
            [
                t["name"],
                t["method"],
                t["statistic"],
                t["df"],
                t["draws"],
                t["p_value"],
                t["alpha"],
                t["reject"],
                t["reference"],
            ]
            for t in report["tests"]
        ]
        table(
            "tests",
            ["name", "method", "statistic", "df", "draws", "p_value", "alpha", "reject", "reference"],
            rows,
        )
    if report.get("compliance"):
        c = report["compliance"]
        table(
            "compliance",
            ["n00", "n01", "n10", "n11", "always_share", "never_share", "complier_share", "strong_instrument"],
            [
                [
                    c["counts"][0][0],
                    c["counts"][0][1],
                    c["counts"][1][0],
                    c["counts"][1][1],
                    c["always_share"],
                    c["never_share"],
                    c["complier_share"],
                    c["strong_instrument"],
                ]
            ],
        )
    if report.get("decomposition"):
        d = report["decomposition"]
        scalar_keys = [k for k in d if k != "rho_curve"]
        table("decomposition", scalar_keys, [[d[k] for k in scalar_keys]])
        table(
            "curve",
            ["rho", "idiosyncratic_variance", "r_squared"],
            [[p["rho"], p["idiosyncratic_variance"], p["r_squared"]] for p in d["rho_curve"]],
        )
    if report.get("late_decomposition"):
        d = report["late_decomposition"]
        scalar_keys = [
            k
            for k in d
            if k not in ("rho_curve", "r2_noncompliance", "r2_compliers", "r2_combined")
        ]
        header = scalar_keys + [
            "r2_noncompliance_lower",
            "r2_noncompliance_upper",
            "r2_compliers_lower",
            "r2_compliers_upper",
            "r2_combined_lower",
            "r2_combined_upper",
        ]
        row = [d[k] for k in scalar_keys]
        for key in ("r2_noncompliance", "r2_compliers", "r2_combined"):
            iv = d[key]
            row.extend([None, None] if iv is None else [iv["lower"], iv["upper"]])
        table("late_decomposition", header, [row])
        table(
            "curve",
            ["rho", "complier_idiosyncratic_variance", "r2_noncompliance", "r2_compliers", "r2_combined"],
            [
                [
                    p["rho"],
                    p["complier_idiosyncratic_variance"],
                    p["r2_noncompliance"],
                    p["r2_compliers"],
                    p["r2_combined"],
                ]
                for p in d["rho_curve"]
            ],
        )
    if report.get("variance_bounds"):
        v = report["variance_bounds"]
        table(
            "variance_bounds",
            ["lower", "upper", "neyman_conservative", "clamped"],
            [[v["lower"], v["upper"], v["neyman_conservative"], v["clamped"]]],
        )
    if report.get("simulation"):
        s = report["simulation"]
        rows = [
            [
                s["scenario"],
                s["n"],
                s["reps"],
                s["alpha"],
                s["seed"],
                e["estimator"],
                e["rejection_rate"],
                e["mc_se"],
                e["rejections"],
                e["completed"],
                e["failures"],
            ]
            for e in s["estimators"]
        ]
        table(
            "simulation",
            ["scenario", "n", "reps", "alpha", "seed", "estimator", "rejection_rate", "mc_se", "rejections", "completed", "failures"],
            rows,
        )
    if report.get("confidence_region"):
        r = report["confidence_region"]
        k = len(r["candidates"][0])
        header = ["candidate"] + [f"beta_{j}" for j in range(k)] + ["p_value", "accepted"]
        rows = [
            [i] + list(cand) + [p, acc]
            for i, (cand, p, acc) in enumerate(
                zip(r["candidates"], r["p_values"], r["accepted"])
            )
        ]
        table("confidence_region", header, rows)
    if report.get("warnings"):
        table(
            "warnings",
            ["code", "message"],
            [[w["code"], w["message"]] for w in report["warnings"]],
        )
    return written


def write_report(report: dict, path, fmt: str) -> None:
    """Serialize a report; JSON as one object, CSV as per-section tables."""
    if fmt == "json":
        Path(path).write_text(json.dumps(report, indent=2) + "\n")
    elif fmt == "csv":
        _csv_sections(report, Path(path))
    else:
        raise HetfxError(f"format must be 'json' or 'csv', got {fmt!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetfx",
        description="Decompose treatment effect variation in completely randomized experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def io_args(p, choices):
        p.add_argument("--input", required=True, help="input CSV path")
        p.add_argument("--output", default=None, help="output path (default: JSON to stdout)")
        p.add_argument("--format", default="json", choices=("json", "csv"))
        p.add_argument(
            "--estimator",
            action="append",
            choices=choices,
            help="estimator to run (repeatable)",
        )

    p = sub.add_parser("analyze-itt", help="coefficients and tests, intention-to-treat")
    io_args(p, ITT_CHOICES)
    p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("analyze-late", help="coefficients and tests under noncompliance")
    io_args(p, LATE_CHOICES)
    p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("decompose", help="variation decomposition with sensitivity curve")
    io_args(p, ITT_CHOICES + LATE_CHOICES)
    p.add_argument("--rho-grid", default="0:1:0.01", help="sensitivity grid as a:b:step")
    p.add_argument("--nonneg-corr", action="store_true", help="assume nonnegative residual correlation")

    p = sub.add_parser("simulate", help="power study on synthetic experiments")
    p.add_argument("--scenario", required=True, choices=("a", "b", "c", "d"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument(
        "--estimator",
        action="append",
        choices=ITT_CHOICES + LATE_CHOICES,
        help="estimator to run (repeatable); complier estimators switch on the noncompliance generator",
    )
    p.add_argument("--output", default=None)
    p.add_argument("--format", default="json", choices=("json", "csv"))

    p = sub.add_parser("fisher-cr", help="randomization confidence region over coordinate grids")
    io_args(p, ITT_CHOICES)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--statistic", default="diff_means", choices=("diff_means", "diff_medians", "ks"))
    p.add_argument("--grid-points", type=int, default=21)
    return parser


RUNNERS = {
    "analyze-itt": run_analyze_itt,
    "analyze-late": run_analyze_late,
    "decompose": run_decompose,
    "simulate": run_simulate,
    "fisher-cr": run_fisher_cr,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = RUNNERS[args.command](args)
        if args.output is None:
            print(json.dumps(report, indent=2))
        else:
            write_report(report, args.output, args.format)
    except HetfxError as err:
        print(
            json.dumps({"error": {"code": err.code, "message": str(err)}}),
            file=sys.stderr,
        )
        return 1
    except OSError as err:
        print(
            json.dumps({"error": {"code": "io", "message": str(err)}}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
