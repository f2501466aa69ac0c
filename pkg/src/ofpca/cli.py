"""Command-line interface: ``ofpca simulate | fit | eval | export-fpc``.

Exit status is 0 on success, 2 for configuration errors, 3 for data errors
and 4 for numerical failures.  The number of threads used to advance tuning
candidates is read from ``OFPCA_WORKERS`` (default 1).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import simgen
from .config import FitConfig, convert, defaults_for, parse_config
from .errors import ConfigError, DataError, NumericalError
from .evaluation import FpcEstimate, diagnostics, fpc_rmse, grid_points, write_metrics_csv
from .modelio import ModelFile, load_model, save_model
from .pipeline import fit
from .stream import read_subjects, write_ndjson

__all__ = ["main", "build_parser", "EXIT_CONFIG", "EXIT_DATA", "EXIT_NUMERICAL"]

log = logging.getLogger("ofpca")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_CONFIG_FIELDS = [f.name for f in fields(FitConfig)]


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".truth.json")


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise ConfigError(f"n: must be >= 1, got {args.n}")
    gen = {"1d": simgen.gen_1d, "2d": simgen.gen_2d}.get(args.setting)
    if gen is None:
        raise ConfigError(f"setting: unknown simulation setting {args.setting!r}")
    subjects, _ = gen(args.n, args.seed)
    out = Path(args.out)
    write_ndjson(subjects, out)
    truth = Path(args.truth_out) if args.truth_out else _sidecar(out)
    simgen.write_truth(truth, args.setting, args.n, args.seed)
    print(f"wrote {len(subjects)} subjects to {out} and truth to {truth}")
    return 0


def _resolve_config(args, data_dims: int) -> FitConfig:
    """Defaults for the data's dimension, then the config file, then command-line flags."""
    overrides = {n: convert(n, getattr(args, n)) for n in _CONFIG_FIELDS if getattr(args, n) is not None}
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    from_file = parse_config(text, base=FitConfig(domain=()))
    dims = len(overrides.get("domain") or from_file.domain) or data_dims
    cfg = parse_config(text, base=defaults_for(dims))
    if "domain" in overrides and "inner_knots" not in overrides and len(overrides["domain"]) != cfg.dims:
        overrides["inner_knots"] = (5,) * len(overrides["domain"])
    return replace(cfg, **overrides).validate()


def cmd_fit(args) -> int:
    if args.config and not Path(args.config).is_file():
        raise ConfigError(f"config file {args.config!r} does not exist")
    subjects = read_subjects(args.data)
    if not subjects:
        raise DataError(f"{args.data}: no subjects")
    cfg = _resolve_config(args, subjects[0].dims)
    if subjects[0].dims != cfg.dims:
        raise DataError(f"data has dimension {subjects[0].dims}, the configured domain {cfg.dims}")
    result = fit(subjects, cfg)
    if result.violations:
        log.warning("%d iterates exceeded the orthonormality tolerance (max residual %.3g)",
                    result.violations, result.max_residual)
    model = ModelFile.from_fit(result)
    save_model(model, args.model)
    metrics = Path(args.metrics) if args.metrics else Path(args.model).with_suffix(".metrics.csv")
    write_metrics_csv(metrics, diagnostics(result.history))
    tuning = Path(args.tuning_path) if args.tuning_path else Path(args.model).with_suffix(".tuning.csv")
    with open(tuning, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "candidate", "tau", "abv", "selected", "best"])
        for rec in result.tuning_log:
            w.writerow([rec.block, rec.candidate, repr(rec.tau), repr(rec.abv), int(rec.selected), int(rec.best)])
    lam = ", ".join(f"{v:.4g}" for v in model.lam)
    print(f"fitted R={model.rank} in {result.steps} steps, tau={result.tau:.3g}, lambda=({lam}), "
          f"sigma2={model.sigma2:.4g}")
    print(f"wrote {args.model}, {metrics}, {tuning}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    truth = simgen.load_truth(args.truth)
    est = FpcEstimate(model.space, model.theta, model.lam, model.sigma2)
    rmse = fpc_rmse(est, truth, args.grid)
    for r, v in enumerate(rmse, 1):
        print(f"phi_{r}: RMSE {v:.6f}")
    report = {
        "model": str(args.model),
        "truth": args.truth,
        "grid": args.grid or (201 if model.space.dims == 1 else 101),
        "rmse": [float(v) for v in rmse],
    }
    out = Path(args.report) if args.report else Path(args.model).with_suffix(".eval.json")
    out.write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    return 0


def cmd_export_fpc(args) -> int:
    model = load_model(args.model)
    if args.grid < 2:
        raise ConfigError(f"grid: needs at least 2 points per dimension, got {args.grid}")
    space = model.space
    pts = grid_points(space.domain, args.grid)
    vals = FpcEstimate(space, model.theta, model.lam, model.sigma2).evaluate(pts)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*(f"loc_{j + 1}" for j in range(space.dims)), *(f"fpc_{r + 1}" for r in range(model.rank))])
        for row in np.hstack([pts, vals]):
            w.writerow([repr(float(v)) for v in row])
    print(f"wrote {len(pts)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ofpca", description="Online functional principal component analysis.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a simulated data set")
    p.add_argument("--setting", choices=["1d", "2d"], default="1d")
    p.add_argument("--n", type=int, default=5000, help="number of subjects")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="NDJSON output path")
    p.add_argument("--truth-out", help="truth sidecar path (default: OUT.truth.json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model to NDJSON or CSV data")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--model", required=True, help="model output path (JSON)")
    p.add_argument("--metrics", help="per-step diagnostics CSV with the smoothed gradient norm (default: MODEL.metrics.csv)")
    p.add_argument("--tuning-path", help="tuning log CSV (default: MODEL.tuning.csv)")
    opts = p.add_argument_group("configuration overrides", "values use the configuration file syntax")
    for name in _CONFIG_FIELDS:
        opts.add_argument(_flag(name), dest=name, metavar="VALUE", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="compare a model with known components")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", required=True, help="builtin:1d, builtin:2d or a JSON truth file")
    p.add_argument("--grid", type=int, default=None, help="points per dimension (default 201 in 1D, 101 in 2D)")
    p.add_argument("--report", help="JSON report path (default: MODEL.eval.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-fpc", help="tabulate the estimated components on a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=int, default=201, help="points per dimension")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_fpc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
