"""Command-line entry point: ``borrowoc {run,map-fit,curve,calibrate,check}``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import __version__
from . import metrics as M
from .calibration import CalibrationRequest, calibrate
from .config import ConfigError, load_historical, read_config, run, write_curve
from .design import MonotonicityError
from .mapmeta import EMConvergenceError, HierarchyConfig, fit_mixture, map_predictive
from .mixture import NormalComponent, robustify

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("borrowoc")


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {text!r}") from None
    if not a < b:
        raise argparse.ArgumentTypeError("range must satisfy a < b")
    return a, b


def _triple(text: str) -> tuple[float, float, int]:
    try:
        a, b, n = text.split(",")
        return float(a), float(b), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b,steps', got {text!r}") from None


def cmd_run(args) -> int:
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mc_reps is not None:
        cfg.mc_reps = args.mc_reps
    if args.tol is not None:
        cfg.quadrature_tol = args.tol
    status = run(cfg, args.out, jobs=args.jobs)
    log.info("wrote report to %s (status %d)", args.out or cfg.output, status)
    return status


def cmd_check(args) -> int:
    cfg = read_config(args.config)
    d = cfg.design
    print(f"design: {d.mode}, borrowing prior {d.borrowed_prior!r}, rule {d.rule}")
    print(f"analysis priors: {', '.join(cfg.analysis_priors)}")
    print(f"design priors: {', '.join(cfg.design_priors) or '-'}")
    print(f"metrics: {len(cfg.metrics)}, curves: {len(cfg.curves)}, seed {cfg.seed}, "
          f"tol {cfg.quadrature_tol:g}, mc_reps {cfg.mc_reps}")
    return EXIT_OK


def cmd_map_fit(args) -> int:
    studies = load_historical(args.data)
    est = np.array([s.estimate for s in studies])
    log.info("%d studies, estimates %.4g..%.4g", len(studies), est.min(), est.max())
    hc = HierarchyConfig(tau_prior_scale=args.tau_scale, tau_grid_size=args.tau_grid)
    pred = map_predictive(studies, hc)
    fit = fit_mixture(pred.grid(), args.components)
    mix = fit.mixture
    if args.robust_weight is not None:
        if args.robust_mean is None or args.robust_sd is None:
            raise ConfigError("map-fit", "--robust-weight needs --robust-mean and --robust-sd")
        mix = robustify(mix, args.robust_weight, args.robust_mean, args.robust_sd)
    doc = {"mixture": mix.to_records(), "kl": fit.kl, "iterations": fit.n_iter, "n_studies": len(studies),
           "predictive_mean": pred.mean(), "predictive_sd": float(np.sqrt(pred.var()))}
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_curve(args) -> int:
    cfg = read_config(args.config)
    if args.analysis_prior and args.analysis_prior not in cfg.analysis_priors:
        raise ConfigError("--analysis-prior", f"unknown analysis prior {args.analysis_prior!r}")
    design = cfg.build_design(args.analysis_prior)
    grid = np.linspace(args.range[0], args.range[1], args.points)
    if args.metric == "classical_type1" and design.mode == "control":
        x, y = M.classical_type1(design, grid, cfg.quadrature_tol)
    else:
        x, y = M.power_curve(design, grid, args.delta_star, cfg.quadrature_tol)
    if args.out:
        write_curve(args.out, x, y)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["truth", "value"])
        w.writerows([f"{a:.6f}", f"{b:.6f}"] for a, b in zip(x, y))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = read_config(args.config)
    sec = dict(cfg.calibration or {})
    for key in ("metric", "design_prior"):
        if getattr(args, key) is not None:
            sec[key] = getattr(args, key)
    if args.alternative is not None:
        sec["alternative"] = args.alternative
    missing = [k for k in ("metric", "design_prior", "alternative") if k not in sec]
    if missing:
        raise ConfigError("calibration", f"missing {', '.join(missing)} (config section or flags)")
    if len(args.param) != len(args.grid):
        raise ConfigError("calibrate", "give one --grid per --param")
    if sec["design_prior"] not in cfg.design_priors:
        raise ConfigError("calibration.design_prior", f"unknown design prior {sec['design_prior']!r}")
    grid = dict(zip(args.param, args.grid))
    informative = robust = None
    if "robust_weight" in grid:
        if "informative" not in sec or "robust" not in sec:
            raise ConfigError("calibration", "robust_weight needs 'informative' and 'robust' entries")
        informative = cfg.analysis_priors[sec["informative"]]
        robust = NormalComponent(float(sec["robust"]["mean"]), float(sec["robust"]["sd"]))
    alt = sec["alternative"]
    alt = tuple(alt) if isinstance(alt, list) else float(alt)
    try:
        req = CalibrationRequest(cfg.build_design(), sec["metric"], cfg.design_priors[sec["design_prior"]],
                                 args.target, grid, alt, informative, robust, cfg.quadrature_tol)
    except ValueError as exc:
        raise ConfigError("calibration", str(exc)) from None
    res = calibrate(req)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*args.param, "metric", "power_at_alternative"])
        for p in res.frontier:
            w.writerow([*(p.params[k] for k in args.param), f"{p.metric:.6f}", f"{p.power:.6f}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    if not res.frontier:
        log.warning("empty frontier: smallest %s was %.6f at %s", sec["metric"], res.min_metric, res.min_params)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="borrowoc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="evaluate every metric and curve in a config")
    r.add_argument("--config", required=True, help="config file or shipped config name")
    r.add_argument("--out", help="output directory (default: config 'output')")
    r.add_argument("--seed", type=int)
    r.add_argument("--mc-reps", type=int)
    r.add_argument("--tol", type=float)
    r.add_argument("--jobs", type=int, default=1, help="worker processes for metric rows")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("map-fit", help="fit a mixture to the predictive prior of historical studies")
    m.add_argument("--data", required=True, help="CSV with header label,estimate,se")
    m.add_argument("--components", type=int, required=True)
    m.add_argument("--tau-scale", type=float, required=True, help="half-normal scale of the between-study sd")
    m.add_argument("--tau-grid", type=int, default=64)
    m.add_argument("--robust-weight", type=float)
    m.add_argument("--robust-mean", type=float)
    m.add_argument("--robust-sd", type=float)
    m.add_argument("--out")
    m.set_defaults(func=cmd_map_fit)

    c = sub.add_parser("curve", help="classical type I or power curve")
    c.add_argument("--config", required=True)
    c.add_argument("--metric", choices=("classical_type1", "power"), default="classical_type1")
    c.add_argument("--range", type=_pair, required=True)
    c.add_argument("--points", type=int, default=M.CURVE_POINTS)
    c.add_argument("--analysis-prior")
    c.add_argument("--delta-star", type=float)
    c.add_argument("--out")
    c.set_defaults(func=cmd_curve)

    k = sub.add_parser("calibrate", help="grid search for admissible designs")
    k.add_argument("--config", required=True)
    k.add_argument("--target", type=float, required=True)
    k.add_argument("--param", action="append", required=True,
                   choices=("robust_weight", "n_t", "n_c", "s_new_scale"))
    k.add_argument("--grid", action="append", type=_triple, required=True)
    k.add_argument("--metric")
    k.add_argument("--design-prior")
    k.add_argument("--alternative", type=float, nargs="+")
    k.add_argument("--out")
    k.set_defaults(func=cmd_calibrate)

    ch = sub.add_parser("check", help="validate a config without running it")
    ch.add_argument("--config", required=True)
    ch.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "alternative", None) is not None:
        args.alternative = args.alternative[0] if len(args.alternative) == 1 else list(args.alternative)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MonotonicityError, EMConvergenceError, ArithmeticError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
