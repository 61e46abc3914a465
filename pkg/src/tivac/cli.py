"""``tivac`` command-line interface: fit, predict, band, simulate, benchmark.

Failures print one line ``ERROR <code>: <message>`` to stderr. Exit codes are
0 on success, 1 for user or data errors and 2 for internal failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .dataset import center_by_group, load_csv, quantile_transform, write_csv
from .errors import ConfigError, TivacError
from .inference import BandConfig, bootstrap_scb, write_band
from .likelihood import NewtonControls
from .model import DEFAULT_LAMBDA_GRID, FitConfig, coefficient_curves, correlation_surface, fit, load_model, save_model
from .simulation import METHODS, ScenarioSpec, generate, run_benchmark, study_specs

logger = logging.getLogger("tivac")

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "grid_points": 200,
    "knots": None,
    "order": 4,
    "lambda_grid": list(DEFAULT_LAMBDA_GRID),
    "folds": 10,
    "B": 200,
    "M": 50,
    "alpha": 0.05,
    "methods": ["tivac", "empirical"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, code="usage")


def _fmt(x):
    return format(float(x), ".17g")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _load_config(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise TivacError(f"{path}: file not found", code="io_missing_file")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})", code="bad_config") from None


def _resolve(args, config, names):
    """Flag > config file > built-in default."""
    resolved = {}
    for name in names:
        cli = getattr(args, name, None)
        if cli is not None:
            resolved[name], source = cli, "flag"
        elif name in config:
            resolved[name], source = config[name], "config"
        else:
            resolved[name], source = DEFAULTS.get(name), "default"
        logger.info("option %s = %r (%s)", name, resolved[name], source)
    return resolved


def _write_sidecar(out_dir, command, resolved, started, outputs):
    meta = {
        "command": command,
        "tool": "tivac",
        "version": __version__,
        "resolved_config": resolved,
        "wall_time_seconds": time.perf_counter() - started,
        "outputs": sorted(os.path.basename(o) for o in outputs),
    }
    path = os.path.join(out_dir, f"{command}_run.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, default=str)
        fh.write("\n")
    return path


def _add_shared(p, fit_opts=False):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--grid-points", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file of option values")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if fit_opts:
        p.add_argument("--knots", type=int, default=None, help="interior knot count")
        p.add_argument("--order", type=int, default=None)
        p.add_argument("--lambda-grid", type=_float_list, default=None)
        p.add_argument("--folds", type=int, default=None)


def _preprocess(data, prep):
    if prep.get("center_by") is not None:
        name = prep["center_by"]
        if name not in data.covariate_names:
            raise ConfigError(f"unknown covariate {name!r} for --center-by", code="bad_covariate")
        data = center_by_group(data, data.covariate_names.index(name))
    if prep.get("quantile_transform"):
        data = quantile_transform(data)
    return data


def _fit_config(r):
    return FitConfig(
        interior_knots=r["knots"],
        order=r["order"],
        lambda_grid=tuple(r["lambda_grid"]),
        cv_folds=r["folds"],
        seed=r["seed"],
        newton=NewtonControls(),
    )


def cmd_fit(args):
    started = time.perf_counter()
    config = _load_config(args.config)
    r = _resolve(args, config, ["seed", "threads", "grid_points", "knots", "order", "lambda_grid", "folds"])
    prep = {"center_by": args.center_by, "quantile_transform": bool(args.quantile_transform)}
    data = load_csv(args.outcomes, args.covariates, allow_duplicate_times=args.allow_duplicate_times)
    data = _preprocess(data, prep)
    model = fit(data, _fit_config(r), preprocessing=prep)
    os.makedirs(args.out_dir, exist_ok=True)
    model_path = os.path.join(args.out_dir, "model.json")
    save_model(model, model_path)
    grid = np.linspace(model.spec.t_min, model.spec.t_max, r["grid_points"])
    curves = coefficient_curves(model, grid)
    coef_path = os.path.join(args.out_dir, "coefficients.csv")
    with open(coef_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *model.covariate_names])
        for j, t in enumerate(grid):
            w.writerow([_fmt(t), *(_fmt(c) for c in curves[:, j])])
    r["preprocessing"] = prep
    _write_sidecar(args.out_dir, "fit", r, started, [model_path, coef_path])
    return 0


def _clip_grid(model, lo, hi, points):
    t_lo, t_hi = model.spec.t_min, model.spec.t_max
    if lo < t_lo or hi > t_hi:
        logger.warning("grid [%s, %s] clipped to training range [%s, %s]", lo, hi, t_lo, t_hi)
    return np.linspace(max(lo, t_lo), min(hi, t_hi), points)


def cmd_predict(args):
    started = time.perf_counter()
    config = _load_config(args.config)
    r = _resolve(args, config, ["grid_points"])
    model = load_model(args.model)
    if args.t_range:
        grid = _clip_grid(model, args.t_range[0], args.t_range[1], r["grid_points"])
    else:
        grid = np.linspace(model.spec.t_min, model.spec.t_max, r["grid_points"])
    xs = [np.asarray(x, dtype=float) for x in (args.x or [])]
    if args.x_grid:
        k, lo, hi, num = args.x_grid
        k = int(k)
        if not 0 <= k < model.p:
            raise ConfigError(f"--x-grid covariate index {k} out of range", code="bad_x")
        base = xs.pop(0) if xs else np.zeros(model.p)
        for v in np.linspace(float(lo), float(hi), int(num)):
            x = base.copy()
            x[k] = v
            xs.append(x)
    if not xs:
        raise ConfigError("give at least one --x vector or an --x-grid", code="bad_x")
    for x in xs:
        if x.size != model.p:
            raise ConfigError(f"covariate vector {x.tolist()} has length {x.size}, expected {model.p}", code="bad_x")
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "surface.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *model.covariate_names, "rho"])
        for x in xs:
            rho = correlation_surface(model, x, grid)
            for t, rv in zip(grid, rho):
                w.writerow([_fmt(t), *(_fmt(v) for v in x), _fmt(rv)])
    r["x"] = [x.tolist() for x in xs]
    _write_sidecar(args.out_dir, "predict", r, started, [path])
    return 0


def cmd_band(args):
    started = time.perf_counter()
    config = _load_config(args.config)
    r = _resolve(args, config, ["seed", "threads", "grid_points", "B", "M", "alpha"])
    cfg = BandConfig(B=r["B"], M=r["M"], alpha=r["alpha"], seed=r["seed"], threads=r["threads"])
    model = load_model(args.model)
    data = load_csv(args.outcomes, args.covariates, allow_duplicate_times=args.allow_duplicate_times)
    data = _preprocess(data, model.preprocessing)
    if data.covariate_names != model.covariate_names:
        raise ConfigError("covariates do not match the model", code="bad_covariate")
    grid = tuple(np.linspace(model.spec.t_min, model.spec.t_max, r["grid_points"]))
    cfg = BandConfig(B=cfg.B, M=cfg.M, alpha=cfg.alpha, grid=grid, seed=cfg.seed, threads=cfg.threads)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    for band in bootstrap_scb(data, model, cfg):
        csv_path = os.path.join(args.out_dir, f"band_{band.k}.csv")
        json_path = os.path.join(args.out_dir, f"band_{band.k}.json")
        write_band(band, csv_path, json_path, extra={"seed": cfg.seed})
        outputs += [csv_path, json_path]
    _write_sidecar(args.out_dir, "band", r, started, outputs)
    return 0


def _scenarios_from(config):
    if "scenarios" in config:
        raw = config["scenarios"]
    elif "scenario" in config:
        raw = [config["scenario"]]
    else:
        raw = [{k: v for k, v in config.items() if k not in ("methods", "fit")}]
    return [ScenarioSpec.from_dict(d) for d in raw]


def _with_overrides(spec, args):
    d = spec.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        d["replications"] = args.replications
    return ScenarioSpec.from_dict(d)


def cmd_simulate(args):
    started = time.perf_counter()
    config = _load_config(args.scenario)
    specs = [_with_overrides(s, args) for s in _scenarios_from(config)]
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    for si, spec in enumerate(specs):
        prefix = f"s{si}_" if len(specs) > 1 else ""
        for rep in range(spec.replications):
            gen = generate(spec, rep)
            out = os.path.join(args.out_dir, f"{prefix}outcomes_r{rep}.csv")
            cov = os.path.join(args.out_dir, f"{prefix}covariates_r{rep}.csv")
            write_csv(gen.data, out, cov)
            outputs += [out, cov]
    _write_sidecar(args.out_dir, "simulate", {"scenarios": [s.to_dict() for s in specs]}, started, outputs)
    return 0


def cmd_benchmark(args):
    started = time.perf_counter()
    config = _load_config(args.scenario) if args.scenario else {}
    r = _resolve(args, config, ["seed", "threads", "methods"])
    if args.all_scenarios or args.full_scale:
        specs = study_specs(full_scale=args.full_scale, seed=r["seed"])
    elif args.scenario:
        specs = [_with_overrides(s, args) for s in _scenarios_from(config)]
    else:
        raise ConfigError("give a scenario config file or --all-scenarios", code="usage")
    for m in r["methods"]:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}", code="bad_method")
    fit_cfg = FitConfig.from_dict(config["fit"]) if "fit" in config else None
    report = run_benchmark(specs, r["methods"], fit_cfg, threads=r["threads"], timing=args.timing)
    os.makedirs(args.out_dir, exist_ok=True)
    rows_path = os.path.join(args.out_dir, "benchmark.csv")
    agg_path = os.path.join(args.out_dir, "benchmark_aggregate.csv")
    report.to_csv(rows_path)
    report.write_aggregate(agg_path)
    r["scenarios"] = [s.to_dict() for s in specs]
    _write_sidecar(args.out_dir, "benchmark", r, started, [rows_path, agg_path])
    return 0


def build_parser():
    parser = _Parser(prog="tivac", description="Time-varying, covariate-dependent correlation models.")
    parser.add_argument("--version", action="version", version=f"tivac {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model to outcome and covariate CSV files")
    p.add_argument("outcomes")
    p.add_argument("covariates")
    _add_shared(p, fit_opts=True)
    p.add_argument("--center-by", default=None, help="covariate name defining centering groups")
    p.add_argument("--quantile-transform", action="store_true")
    p.add_argument("--allow-duplicate-times", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="correlation surface from a fitted model")
    p.add_argument("model")
    _add_shared(p)
    p.add_argument("--x", type=_float_list, action="append", help="covariate vector, comma-separated")
    p.add_argument("--x-grid", nargs=4, metavar=("K", "LO", "HI", "NUM"),
                   help="vary covariate K over NUM values in [LO, HI] (base vector from the first --x)")
    p.add_argument("--t-range", nargs=2, type=float, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("band", help="bootstrap simultaneous confidence bands")
    p.add_argument("model")
    p.add_argument("outcomes")
    p.add_argument("covariates")
    _add_shared(p)
    p.add_argument("--B", type=int, default=None, help="outer bootstrap replicates")
    p.add_argument("--M", type=int, default=None, help="inner bootstrap replicates")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--allow-duplicate-times", action="store_true")
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("simulate", help="generate datasets from a scenario config")
    p.add_argument("scenario")
    _add_shared(p)
    p.add_argument("--replications", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="RMSE benchmark over scenarios")
    p.add_argument("scenario", nargs="?")
    _add_shared(p)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--methods", type=_str_list, default=None)
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds per row")
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--all-scenarios", action="store_true", help="all scenario cells at small scale")
    scale.add_argument("--full-scale", action="store_true", help="all scenario cells at full scale")
    p.set_defaults(func=cmd_benchmark)
    return parser


def _check_alpha(args):
    alpha = getattr(args, "alpha", None)
    if alpha is not None and not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}", code="bad_alpha")
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        raise ConfigError("--threads must be at least 1", code="bad_threads")


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2),
            format="%(levelname)s %(name)s: %(message)s",
        )
        _check_alpha(args)
        return args.func(args)
    except TivacError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    except Exception as exc:  # noqa: BLE001
        print(f"ERROR internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
