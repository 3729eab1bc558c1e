"""Command-line interface: fit, predict, region, diff-region, simulate.

Every command reads an optional JSON config file; explicit flags override
config values, which override built-in defaults.  Reports are JSON documents
with a metadata block (version, seed, effective config) so a run can be
reproduced from its output alone.  Errors print one human-readable line to
stderr and exit with the category codes documented in the README.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .errors import (
    DegenerateCorrection,
    DimensionMismatch,
    IndexOutOfRange,
    InvalidGroupSize,
    InvalidInput,
    MvfhError,
    NonPDSamplingCovariance,
    NotPositiveDefinite,
    NotPSD,
    ParseError,
    RankDeficientDesign,
    SameArea,
    UnsupportedK,
)
from .estimators import gls_beta, psi_adjusted
from .model import load_dataset
from .prediction import msem_estimate
from .regions import contains, corrected_region, diff_region, naive_region
from .simulation import (
    coverage_experiment,
    coverage_to_json,
    paper_design,
    write_coverage_csv,
)

EXIT_CODES = (
    (ParseError, 2),
    (InvalidInput, 2),
    (DimensionMismatch, 3),
    (RankDeficientDesign, 4),
    (NonPDSamplingCovariance, 5),
    (NotPositiveDefinite, 6),
    (NotPSD, 6),
    (IndexOutOfRange, 7),
    (SameArea, 8),
    (DegenerateCorrection, 9),
    (UnsupportedK, 10),
    (InvalidGroupSize, 10),
)

TABLE_PRESETS = {
    1: {"k": 2, "m": 30, "pattern": "a", "difference": False},
    2: {"k": 2, "m": 30, "pattern": "b", "difference": False},
    3: {"k": 3, "m": 30, "pattern": "a", "difference": False},
    4: {"k": 2, "m": 30, "pattern": "a", "difference": True},
}


def _exit_code(exc: MvfhError) -> int:
    for klass, code in EXIT_CODES:
        if isinstance(exc, klass):
            return code
    return 1


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"config {path} must hold a JSON object")
    return doc


def _resolve(args: argparse.Namespace, config: dict, key: str, default):
    """Flag value if given, else config value, else default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _mat(a) -> list:
    return [[float(v) for v in row] for row in np.atleast_2d(a)]


def _vec(a) -> list:
    return [float(v) for v in np.atleast_1d(a)]


def _meta(command: str, config_echo: dict) -> dict:
    return {"version": __version__, "command": command, "config": config_echo}


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _read_theta_file(path: str, k: int) -> list[np.ndarray]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read theta file {path}: {exc}") from exc
    if isinstance(doc, dict):
        doc = doc.get("theta")
    arr = np.asarray(doc, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != k:
        raise DimensionMismatch(f"theta file must hold k={k} vectors, got shape {arr.shape}")
    return [arr[i] for i in range(arr.shape[0])]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_fit(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    data = _resolve(args, config, "data", None)
    fmt = _resolve(args, config, "format", None)
    if data is None:
        raise InvalidInput("fit needs a dataset path (positional or config 'data')")
    dataset = load_dataset(data, fmt)
    cov = psi_adjusted(dataset)
    beta = gls_beta(dataset, cov.adjusted)
    report = {
        "meta": _meta("fit", {"data": str(data), "format": fmt}),
        "beta_gls": _vec(beta),
        "psi_raw_pr": _mat(cov.raw_pr),
        "psi_pr": _mat(cov.bias_corrected),
        "psi_adjusted": _mat(cov.adjusted),
        "eigenvalues": _vec(cov.eigen.eigenvalues),
        "a_hat": float(cov.a_hat),
        "b_hat": _vec(cov.b_hat),
    }
    _emit(report, _resolve(args, config, "out", None))
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    data = _resolve(args, config, "data", None)
    if data is None:
        raise InvalidInput("predict needs a dataset path")
    dataset = load_dataset(data, _resolve(args, config, "format", None))
    areas = _resolve(args, config, "area", None)
    indices = list(range(dataset.m)) if areas is None else [int(a) for a in areas]
    cov = psi_adjusted(dataset)
    predictions = []
    for a in indices:
        pred = msem_estimate(dataset, a, cov)
        predictions.append(
            {
                "area": a,
                "theta_eb": _vec(pred.theta_eb),
                "g1": _mat(pred.g1),
                "g2": _mat(pred.g2),
                "g3": _mat(pred.g3),
                "msem": _mat(pred.msem),
                "h_mat": _mat(pred.h_mat),
            }
        )
    report = {
        "meta": _meta("predict", {"data": str(data), "area": indices}),
        "predictions": predictions,
    }
    _emit(report, _resolve(args, config, "out", None))
    return 0


def _region_block(region, thetas) -> dict:
    block = {
        "center": _vec(region.center),
        "shape": _mat(region.shape),
        "radius_sq": float(region.radius_sq),
        "h_star": float(region.h_star),
        "alpha": float(region.alpha),
    }
    if region.bterms is not None:
        block["bterms"] = {
            "b1": region.bterms.b1,
            "b2": region.bterms.b2,
            "b3": region.bterms.b3,
        }
    if thetas is not None:
        block["contains"] = [bool(contains(region, t)) for t in thetas]
    return block


def _cmd_region(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    data = _resolve(args, config, "data", None)
    if data is None:
        raise InvalidInput("region needs a dataset path")
    a = _resolve(args, config, "area", None)
    if a is None:
        raise InvalidInput("region needs --area")
    alpha = float(_resolve(args, config, "alpha", 0.05))
    dataset = load_dataset(data, _resolve(args, config, "format", None))
    cov = psi_adjusted(dataset)
    theta_file = _resolve(args, config, "test", None)
    thetas = _read_theta_file(theta_file, dataset.k) if theta_file else None
    naive = naive_region(dataset, int(a), cov, alpha)
    report = {
        "meta": _meta("region", {"data": str(data), "area": int(a), "alpha": alpha,
                                 "naive_only": bool(args.naive)}),
        "naive": _region_block(naive, thetas),
    }
    if not args.naive:
        report["corrected"] = _region_block(corrected_region(dataset, int(a), cov, alpha), thetas)
    _emit(report, _resolve(args, config, "out", None))
    return 0


def _cmd_diff_region(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    data = _resolve(args, config, "data", None)
    if data is None:
        raise InvalidInput("diff-region needs a dataset path")
    a = _resolve(args, config, "area_a", None)
    b = _resolve(args, config, "area_b", None)
    if a is None or b is None:
        raise InvalidInput("diff-region needs --area-a and --area-b")
    alpha = float(_resolve(args, config, "alpha", 0.05))
    dataset = load_dataset(data, _resolve(args, config, "format", None))
    cov = psi_adjusted(dataset)
    theta_file = _resolve(args, config, "test", None)
    thetas = _read_theta_file(theta_file, dataset.k) if theta_file else None
    region = diff_region(dataset, int(a), int(b), cov, alpha)
    report = {
        "meta": _meta(
            "diff-region", {"data": str(data), "area_a": int(a), "area_b": int(b), "alpha": alpha}
        ),
        "corrected": _region_block(region, thetas),
    }
    _emit(report, _resolve(args, config, "out", None))
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    preset = TABLE_PRESETS.get(_resolve(args, config, "table", None) or 0, {})
    k = int(_resolve(args, config, "k", preset.get("k", 2)))
    m = int(_resolve(args, config, "m", preset.get("m", 30)))
    pattern = _resolve(args, config, "pattern", preset.get("pattern", "a"))
    difference = bool(_resolve(args, config, "difference", preset.get("difference", False)))
    alpha = float(_resolve(args, config, "alpha", 0.05))
    reps = int(_resolve(args, config, "reps", 10_000))
    seed = int(_resolve(args, config, "seed", 0))
    threads = int(_resolve(args, config, "threads", 1))
    rhos = _resolve(args, config, "rho", [0.2, 0.4, 0.6])
    if isinstance(rhos, (int, float)):
        rhos = [rhos]
    rhos = [float(r) for r in rhos]
    dist = _resolve(args, config, "dist", "both")
    dists = ["normal", "chi2"] if dist == "both" else [dist]
    if reps < 1:
        raise InvalidInput("reps must be >= 1")

    results = []
    for d in dists:
        for rho in rhos:
            design = paper_design(
                k=k, m=m, rho=rho, pattern=pattern, dist=d, alpha=alpha,
                reps=reps, seed=seed, difference=difference,
            )
            results.append(coverage_experiment(design, threads=threads))

    echo = {
        "k": k, "m": m, "pattern": pattern, "difference": difference, "alpha": alpha,
        "reps": reps, "seed": seed, "rho": rhos, "dist": dists, "threads": threads,
    }
    meta_flat = {
        "version": __version__, "command": "simulate", "k": k, "m": m, "pattern": pattern,
        "difference": difference, "alpha": alpha, "reps": reps, "seed": seed,
    }
    out_csv = _resolve(args, config, "out_csv", None)
    out_json = _resolve(args, config, "out_json", None)
    if out_csv:
        write_coverage_csv(results, out_csv, meta=meta_flat)
    doc = coverage_to_json(results, meta=_meta("simulate", echo))
    if out_json:
        with open(out_json, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if not out_csv and not out_json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvfh",
        description="Multivariate small-area estimation with corrected confidence regions.",
    )
    parser.add_argument("--version", action="version", version=f"mvfh {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", help="write the JSON report here instead of stdout")

    p_fit = sub.add_parser("fit", help="estimate coefficients and the covariance chain")
    p_fit.add_argument("data", nargs="?", help="dataset path (.json file or CSV directory)")
    p_fit.add_argument("--format", choices=["json", "csv"])
    add_common(p_fit)
    p_fit.set_defaults(func=_cmd_fit)

    p_pred = sub.add_parser("predict", help="EBLUP and MSEM estimate per area")
    p_pred.add_argument("data", nargs="?")
    p_pred.add_argument("--format", choices=["json", "csv"])
    p_pred.add_argument("--area", type=int, action="append", help="repeatable; default all areas")
    add_common(p_pred)
    p_pred.set_defaults(func=_cmd_predict)

    p_reg = sub.add_parser("region", help="confidence region for one area mean")
    p_reg.add_argument("data", nargs="?")
    p_reg.add_argument("--format", choices=["json", "csv"])
    p_reg.add_argument("--area", type=int)
    p_reg.add_argument("--alpha", type=float)
    p_reg.add_argument("--naive", action="store_true", help="report only the uncorrected region")
    p_reg.add_argument("--test", help="JSON file of theta vectors to test for membership")
    add_common(p_reg)
    p_reg.set_defaults(func=_cmd_region)

    p_diff = sub.add_parser("diff-region", help="confidence region for a difference of means")
    p_diff.add_argument("data", nargs="?")
    p_diff.add_argument("--format", choices=["json", "csv"])
    p_diff.add_argument("--area-a", type=int)
    p_diff.add_argument("--area-b", type=int)
    p_diff.add_argument("--alpha", type=float)
    p_diff.add_argument("--test", help="JSON file of difference vectors to test for membership")
    add_common(p_diff)
    p_diff.set_defaults(func=_cmd_diff_region)

    p_sim = sub.add_parser("simulate", help="coverage-probability experiment")
    p_sim.add_argument("--table", type=int, choices=[1, 2, 3, 4],
                       help="preset matching the benchmark table configurations")
    p_sim.add_argument("--k", type=int)
    p_sim.add_argument("--m", type=int)
    p_sim.add_argument("--rho", type=float, action="append")
    p_sim.add_argument("--pattern", choices=["a", "b"])
    p_sim.add_argument("--dist", choices=["normal", "chi2", "both"])
    p_sim.add_argument("--alpha", type=float)
    p_sim.add_argument("--reps", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--threads", type=int, help="worker processes; results do not depend on it")
    p_sim.add_argument("--difference", action="store_const", const=True, default=None,
                       help="difference-of-means regions instead of single-area regions")
    p_sim.add_argument("--config", help="JSON config file; flags override its values")
    p_sim.add_argument("--out-csv", help="write the coverage table as CSV")
    p_sim.add_argument("--out-json", help="write the coverage results as JSON")
    p_sim.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MvfhError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
