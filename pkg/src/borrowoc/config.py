"""Run configuration, historical-data loading and report emission.

A run is declared in one JSON file::

    {
      "design": {"mode": "control", "n_t": 40, "n_c": 20, "sigma": 88,
                 "prior_t": "vague_t", "prior_c": "robust_map",
                 "rule": {"delta_null": 0, "direction": "less", "confidence": 0.975}},
      "analysis_priors": {"map": [{"weight": 0.51, "mean": -51, "sd": 19.9}, ...]},
      "design_priors": {"sceptical": {"kind": "mixture", "mixture": [...]},
                        "map": {"kind": "mixture", "mixture": "map"}},
      "metrics": [{"name": "t1_map_sceptical", "metric": "average_type1",
                   "analysis_prior": "map", "design_prior": "sceptical"}],
      "curves": [{"name": "map", "metric": "classical_type1", "analysis_prior": "map",
                  "range": [-150, 50], "points": 201}],
      "seed": 0, "quadrature_tol": 1e-6, "mc_reps": 1000000
    }

Contrast designs give ``s_new`` either as a number or as
``{"solve_type1": 0.332, "prior": "robust", "branch": "upper"}``, in which
case the standard error is solved so the named prior's classical type I error
hits the given level. Mixture fields accept inline ``{weight, mean, sd}``
records or the name of an analysis prior.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import metrics as M
from ._accel import backend_name
from .calibration import solve_s_new
from .design import ContrastBorrowDesign, ControlBorrowDesign, SuccessRule
from .mapmeta import HistoricalStudy
from .mixture import MixtureNormal

REPORT_COLUMNS = ("name", "value", "abs_error", "method", "n_reps", "seed", "status")
METHODS = ("quadrature", "monte_carlo", "both")
CURVE_METRICS = ("classical_type1", "power")

DEFAULTS = {"seed": 0, "quadrature_tol": M.DEFAULT_TOL, "mc_reps": 1_000_000, "output": "out"}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` locates the offending field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


# --------------------------------------------------------------------------
# parsed types
# --------------------------------------------------------------------------


@dataclass
class DesignSpec:
    mode: str
    rule: SuccessRule
    n_t: Optional[int] = None
    n_c: Optional[int] = None
    sigma: Optional[float] = None
    prior_t: Optional[str] = None
    prior_c: Optional[str] = None
    prior_delta: Optional[str] = None
    s_new: Optional[float] = None
    s_new_solve: Optional[dict] = None

    @property
    def borrowed_prior(self) -> str:
        return self.prior_c if self.mode == "control" else self.prior_delta

    def to_dict(self) -> dict:
        rule = {"delta_null": self.rule.delta_null, "direction": self.rule.direction,
                "confidence": self.rule.confidence}
        if self.mode == "control":
            return {"mode": "control", "n_t": self.n_t, "n_c": self.n_c, "sigma": self.sigma,
                    "prior_t": self.prior_t, "prior_c": self.prior_c, "rule": rule}
        s_new = self.s_new if self.s_new_solve is None else dict(self.s_new_solve)
        return {"mode": "contrast", "s_new": s_new, "prior_delta": self.prior_delta, "rule": rule}


@dataclass
class MetricSpec:
    name: str
    metric: str
    analysis_prior: Optional[str] = None
    design_prior: Optional[str] = None
    delta_star: Optional[float] = None
    truth: Optional[object] = None
    range: Optional[tuple] = None
    method: str = "quadrature"

    def to_dict(self) -> dict:
        d = {"name": self.name, "metric": self.metric}
        for k in ("analysis_prior", "design_prior", "delta_star", "truth"):
            v = getattr(self, k)
            if v is not None:
                d[k] = list(v) if isinstance(v, tuple) else v
        if self.range is not None:
            d["range"] = list(self.range)
        d["method"] = self.method
        return d


@dataclass
class CurveSpec:
    name: str
    metric: str
    range: tuple
    points: int = M.CURVE_POINTS
    analysis_prior: Optional[str] = None
    delta_star: Optional[float] = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "metric": self.metric, "range": list(self.range), "points": self.points}
        if self.analysis_prior is not None:
            d["analysis_prior"] = self.analysis_prior
        if self.delta_star is not None:
            d["delta_star"] = self.delta_star
        return d


@dataclass
class RunConfig:
    design: DesignSpec
    analysis_priors: dict
    design_priors: dict
    metrics: list
    curves: list = field(default_factory=list)
    calibration: Optional[dict] = None
    output: str = DEFAULTS["output"]
    seed: int = DEFAULTS["seed"]
    quadrature_tol: float = DEFAULTS["quadrature_tol"]
    mc_reps: int = DEFAULTS["mc_reps"]

    def to_dict(self) -> dict:
        out = {
            "design": self.design.to_dict(),
            "analysis_priors": {k: m.to_records() for k, m in self.analysis_priors.items()},
            "design_priors": {k: _design_prior_to_dict(p) for k, p in self.design_priors.items()},
            "metrics": [m.to_dict() for m in self.metrics],
            "curves": [c.to_dict() for c in self.curves],
            "output": self.output,
            "seed": self.seed,
            "quadrature_tol": self.quadrature_tol,
            "mc_reps": self.mc_reps,
        }
        if self.calibration is not None:
            out["calibration"] = self.calibration
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    # ---- design construction -------------------------------------------------

    def solved_s_new(self) -> Optional[float]:
        spec = self.design
        if spec.mode != "contrast":
            return None
        if spec.s_new_solve is None:
            return spec.s_new
        sol = spec.s_new_solve
        return solve_s_new(self.analysis_priors[sol["prior"]], float(sol["solve_type1"]), spec.rule,
                           branch=sol.get("branch", "upper"))

    def build_design(self, analysis_prior: Optional[str] = None, s_new: Optional[float] = None):
        spec = self.design
        name = analysis_prior or spec.borrowed_prior
        prior = self.analysis_priors[name]
        if spec.mode == "control":
            return ControlBorrowDesign(spec.n_t, spec.n_c, spec.sigma, self.analysis_priors[spec.prior_t],
                                       prior, spec.rule)
        s = s_new if s_new is not None else self.solved_s_new()
        return ContrastBorrowDesign(s, prior, spec.rule)


def _design_prior_to_dict(p: M.DesignPrior) -> dict:
    if p.kind == "mixture":
        return {"kind": "mixture", "mixture": p.mixture.to_records()}
    if p.kind == "truncated_mixture":
        d = {"kind": "truncated_mixture", "mixture": p.mixture.to_records()}
        if math.isfinite(p.lower):
            d["lower"] = p.lower
        if math.isfinite(p.upper):
            d["upper"] = p.upper
        return d
    if p.kind == "point_mass":
        return {"kind": "point_mass", "location": p.location}
    return {"kind": "spike_and_slab", "location": p.location, "spike_weight": p.spike_weight,
            "slab": p.slab.to_records()}


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _check_keys(obj, allowed, required, path):
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(path, f"unknown key(s) {', '.join(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ConfigError(path, f"missing required field(s) {', '.join(missing)}")


def _num(v, path, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer:
        if int(v) != v:
            raise ConfigError(path, f"expected an integer, got {v!r}")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    return float(v)


def _name(v, path):
    if not isinstance(v, str) or not v:
        raise ConfigError(path, f"expected a non-empty name, got {v!r}")
    return v


def _records(v, path) -> MixtureNormal:
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a non-empty list of {weight, mean, sd} records")
    for i, r in enumerate(v):
        _check_keys(r, ("weight", "mean", "sd"), ("weight", "mean", "sd"), f"{path}[{i}]")
        for k in ("weight", "mean", "sd"):
            _num(r[k], f"{path}[{i}].{k}")
    try:
        return MixtureNormal.from_records(v)
    except ValueError as exc:
        raise ConfigError(path, f"invalid mixture: {exc}") from None


def _mixture_field(v, priors, path) -> MixtureNormal:
    if isinstance(v, str):
        if v not in priors:
            raise ConfigError(path, f"dangling reference to analysis prior {v!r}")
        return priors[v]
    return _records(v, path)


def _parse_rule(obj, path) -> SuccessRule:
    obj = {} if obj is None else obj
    _check_keys(obj, ("delta_null", "direction", "confidence"), (), path)
    try:
        return SuccessRule(_num(obj.get("delta_null", 0.0), f"{path}.delta_null"),
                           obj.get("direction", "greater"),
                           _num(obj.get("confidence", 0.975), f"{path}.confidence"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


def _parse_design(obj, priors, path="design") -> DesignSpec:
    if not isinstance(obj, dict) or "mode" not in obj:
        raise ConfigError(path, "missing required field(s) mode")
    mode = obj["mode"]
    if mode == "control":
        _check_keys(obj, ("mode", "n_t", "n_c", "sigma", "prior_t", "prior_c", "rule"),
                    ("n_t", "n_c", "sigma", "prior_t", "prior_c"), path)
        spec = DesignSpec("control", _parse_rule(obj.get("rule"), f"{path}.rule"),
                          n_t=_num(obj["n_t"], f"{path}.n_t", True), n_c=_num(obj["n_c"], f"{path}.n_c", True),
                          sigma=_num(obj["sigma"], f"{path}.sigma"),
                          prior_t=_name(obj["prior_t"], f"{path}.prior_t"),
                          prior_c=_name(obj["prior_c"], f"{path}.prior_c"))
        if spec.n_t < 1 or spec.n_c < 1 or spec.sigma <= 0:
            raise ConfigError(path, "sample sizes and sigma must be positive")
        refs = [("prior_t", spec.prior_t), ("prior_c", spec.prior_c)]
    elif mode == "contrast":
        _check_keys(obj, ("mode", "s_new", "prior_delta", "rule"), ("s_new", "prior_delta"), path)
        spec = DesignSpec("contrast", _parse_rule(obj.get("rule"), f"{path}.rule"),
                          prior_delta=_name(obj["prior_delta"], f"{path}.prior_delta"))
        s = obj["s_new"]
        if isinstance(s, dict):
            _check_keys(s, ("solve_type1", "prior", "branch"), ("solve_type1", "prior"), f"{path}.s_new")
            lvl = _num(s["solve_type1"], f"{path}.s_new.solve_type1")
            if not 0 < lvl < 1:
                raise ConfigError(f"{path}.s_new.solve_type1", "must lie in (0, 1)")
            branch = s.get("branch", "upper")
            if branch not in ("upper", "lower"):
                raise ConfigError(f"{path}.s_new.branch", "must be 'upper' or 'lower'")
            spec.s_new_solve = {"solve_type1": lvl, "prior": _name(s["prior"], f"{path}.s_new.prior"),
                                "branch": branch}
            refs = [("prior_delta", spec.prior_delta), ("s_new.prior", spec.s_new_solve["prior"])]
        else:
            spec.s_new = _num(s, f"{path}.s_new")
            if spec.s_new <= 0:
                raise ConfigError(f"{path}.s_new", "must be positive")
            refs = [("prior_delta", spec.prior_delta)]
    else:
        raise ConfigError(f"{path}.mode", f"must be 'control' or 'contrast', got {mode!r}")
    for key, ref in refs:
        if ref not in priors:
            raise ConfigError(f"{path}.{key}", f"dangling reference to analysis prior {ref!r}")
    return spec


def _parse_design_prior(obj, priors, path) -> M.DesignPrior:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(path, "missing required field(s) kind")
    kind = obj["kind"]
    try:
        if kind == "mixture":
            _check_keys(obj, ("kind", "mixture"), ("mixture",), path)
            return M.DesignPrior.from_mixture(_mixture_field(obj["mixture"], priors, f"{path}.mixture"))
        if kind == "truncated_mixture":
            _check_keys(obj, ("kind", "mixture", "lower", "upper"), ("mixture",), path)
            if "lower" not in obj and "upper" not in obj:
                raise ConfigError(path, "truncated_mixture needs lower and/or upper")
            return M.DesignPrior("truncated_mixture",
                                 mixture=_mixture_field(obj["mixture"], priors, f"{path}.mixture"),
                                 lower=_num(obj.get("lower", -math.inf), f"{path}.lower") if "lower" in obj else -math.inf,
                                 upper=_num(obj.get("upper", math.inf), f"{path}.upper") if "upper" in obj else math.inf)
        if kind == "point_mass":
            _check_keys(obj, ("kind", "location"), ("location",), path)
            return M.DesignPrior.point_mass(_num(obj["location"], f"{path}.location"))
        if kind == "spike_and_slab":
            _check_keys(obj, ("kind", "location", "spike_weight", "slab"), ("location", "spike_weight", "slab"), path)
            return M.DesignPrior.spike_and_slab(_num(obj["location"], f"{path}.location"),
                                                _num(obj["spike_weight"], f"{path}.spike_weight"),
                                                _mixture_field(obj["slab"], priors, f"{path}.slab"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    raise ConfigError(f"{path}.kind", f"unknown design prior kind {kind!r}")


def _parse_metric(obj, priors, dpriors, path) -> MetricSpec:
    _check_keys(obj, ("name", "metric", "analysis_prior", "design_prior", "delta_star", "truth", "range", "method"),
                ("name", "metric"), path)
    metric = obj["metric"]
    if metric not in M.METRICS:
        raise ConfigError(f"{path}.metric", f"unknown metric {metric!r}")
    spec = MetricSpec(_name(obj["name"], f"{path}.name"), metric)
    if "analysis_prior" in obj:
        spec.analysis_prior = _name(obj["analysis_prior"], f"{path}.analysis_prior")
        if spec.analysis_prior not in priors:
            raise ConfigError(f"{path}.analysis_prior", f"dangling reference to analysis prior {spec.analysis_prior!r}")
    if "design_prior" in obj:
        spec.design_prior = _name(obj["design_prior"], f"{path}.design_prior")
        if spec.design_prior not in dpriors:
            raise ConfigError(f"{path}.design_prior", f"dangling reference to design prior {spec.design_prior!r}")
    if "delta_star" in obj:
        spec.delta_star = _num(obj["delta_star"], f"{path}.delta_star")
    if "truth" in obj:
        t = obj["truth"]
        spec.truth = (tuple(_num(x, f"{path}.truth[{i}]") for i, x in enumerate(t)) if isinstance(t, list)
                      else _num(t, f"{path}.truth"))
    if "range" in obj:
        r = obj["range"]
        if not isinstance(r, list) or len(r) != 2:
            raise ConfigError(f"{path}.range", "expected [lo, hi]")
        spec.range = (_num(r[0], f"{path}.range[0]"), _num(r[1], f"{path}.range[1]"))
    spec.method = obj.get("method", "quadrature")
    if spec.method not in METHODS:
        raise ConfigError(f"{path}.method", f"must be one of {METHODS}")
    needs_prior = metric not in ("conditional_power", "classical_type1", "scan_max", "scan_min")
    if needs_prior and spec.design_prior is None:
        raise ConfigError(path, f"metric {metric!r} needs a design_prior")
    if metric == "conditional_power" and spec.truth is None:
        raise ConfigError(path, "conditional_power needs a truth")
    if metric in ("scan_max", "scan_min") and spec.range is None:
        raise ConfigError(path, f"{metric} needs a range")
    return spec


def _parse_curve(obj, priors, path) -> CurveSpec:
    _check_keys(obj, ("name", "metric", "range", "points", "analysis_prior", "delta_star"), ("name", "metric", "range"),
                path)
    if obj["metric"] not in CURVE_METRICS:
        raise ConfigError(f"{path}.metric", f"must be one of {CURVE_METRICS}")
    r = obj["range"]
    if not isinstance(r, list) or len(r) != 2:
        raise ConfigError(f"{path}.range", "expected [lo, hi]")
    spec = CurveSpec(_name(obj["name"], f"{path}.name"), obj["metric"],
                     (_num(r[0], f"{path}.range[0]"), _num(r[1], f"{path}.range[1]")),
                     _num(obj.get("points", M.CURVE_POINTS), f"{path}.points", True))
    if spec.points < 2:
        raise ConfigError(f"{path}.points", "need at least 2 points")
    if "analysis_prior" in obj:
        spec.analysis_prior = _name(obj["analysis_prior"], f"{path}.analysis_prior")
        if spec.analysis_prior not in priors:
            raise ConfigError(f"{path}.analysis_prior", f"dangling reference to analysis prior {spec.analysis_prior!r}")
    if "delta_star" in obj:
        spec.delta_star = _num(obj["delta_star"], f"{path}.delta_star")
    return spec


CALIBRATION_KEYS = ("metric", "design_prior", "informative", "robust", "alternative", "target", "grid")


def _parse_calibration(obj, priors, dpriors, path="calibration") -> dict:
    _check_keys(obj, CALIBRATION_KEYS, ("metric", "design_prior", "alternative"), path)
    out = dict(obj)
    if obj["design_prior"] not in dpriors:
        raise ConfigError(f"{path}.design_prior", f"dangling reference to design prior {obj['design_prior']!r}")
    if "informative" in obj and obj["informative"] not in priors:
        raise ConfigError(f"{path}.informative", f"dangling reference to analysis prior {obj['informative']!r}")
    if "robust" in obj:
        _check_keys(obj["robust"], ("mean", "sd"), ("mean", "sd"), f"{path}.robust")
    return out


TOP_KEYS = ("design", "analysis_priors", "design_priors", "metrics", "curves", "calibration", "output", "seed",
            "quadrature_tol", "mc_reps")


def parse_config(text: str) -> RunConfig:
    """Validate configuration text and materialise all defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    _check_keys(raw, TOP_KEYS, ("design", "analysis_priors"), "")
    if not isinstance(raw["analysis_priors"], dict) or not raw["analysis_priors"]:
        raise ConfigError("analysis_priors", "expected a non-empty object")
    priors = {k: _records(v, f"analysis_priors.{k}") for k, v in raw["analysis_priors"].items()}
    dp_raw = raw.get("design_priors", {})
    if not isinstance(dp_raw, dict):
        raise ConfigError("design_priors", "expected an object")
    dpriors = {k: _parse_design_prior(v, priors, f"design_priors.{k}") for k, v in dp_raw.items()}
    design = _parse_design(raw["design"], priors)
    metrics = raw.get("metrics", [])
    curves = raw.get("curves", [])
    if not isinstance(metrics, list):
        raise ConfigError("metrics", "expected a list")
    if not isinstance(curves, list):
        raise ConfigError("curves", "expected a list")
    mspecs = [_parse_metric(m, priors, dpriors, f"metrics[{i}]") for i, m in enumerate(metrics)]
    cspecs = [_parse_curve(c, priors, f"curves[{i}]") for i, c in enumerate(curves)]
    names = [m.name for m in mspecs]
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        raise ConfigError("metrics", f"duplicate metric name(s) {', '.join(dup)}")
    cnames = [c.name for c in cspecs]
    if len(set(cnames)) != len(cnames):
        raise ConfigError("curves", "duplicate curve names")
    cfg = RunConfig(design, priors, dpriors, mspecs, cspecs,
                    output=str(raw.get("output", DEFAULTS["output"])),
                    seed=_num(raw.get("seed", DEFAULTS["seed"]), "seed", True),
                    quadrature_tol=_num(raw.get("quadrature_tol", DEFAULTS["quadrature_tol"]), "quadrature_tol"),
                    mc_reps=_num(raw.get("mc_reps", DEFAULTS["mc_reps"]), "mc_reps", True))
    if cfg.quadrature_tol <= 0:
        raise ConfigError("quadrature_tol", "must be positive")
    if cfg.mc_reps < 10_000:
        raise ConfigError("mc_reps", "must be at least 10000")
    if "calibration" in raw:
        cfg.calibration = _parse_calibration(raw["calibration"], priors, dpriors)
    return cfg


def shipped_configs() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("borrowoc.data").iterdir() if p.name.endswith(".json"))


def read_config(path_or_name: str) -> RunConfig:
    """Parse a config file, or a shipped config by name (e.g. ``crohns.case1``)."""
    p = Path(path_or_name)
    if p.is_file():
        return parse_config(p.read_text(encoding="utf-8"))
    if path_or_name in shipped_configs():
        return parse_config(resources.files("borrowoc.data").joinpath(f"{path_or_name}.json")
                            .read_text(encoding="utf-8"))
    raise ConfigError("", f"no config file or shipped config named {path_or_name!r}")


# --------------------------------------------------------------------------
# historical data
# --------------------------------------------------------------------------


def load_historical(path) -> list[HistoricalStudy]:
    """Studies from a CSV with header ``label,estimate,se``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    if header != ["label", "estimate", "se"]:
        raise ValueError(f"{path}: header must be 'label,estimate,se', got {','.join(header)!r}")
    if len(rows) == 1:
        raise ValueError(f"{path}: no data rows")
    out = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != 3:
            raise ValueError(f"{path}: row {i}: expected 3 fields, got {len(r)}")
        label = r[0].strip()
        try:
            est, se = float(r[1]), float(r[2])
        except ValueError:
            raise ValueError(f"{path}: row {i}: non-numeric estimate or se") from None
        try:
            out.append(HistoricalStudy(label, est, se))
        except ValueError as exc:
            raise ValueError(f"{path}: row {i}: {exc}") from None
    return out


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


def _format_row(rep: M.MetricReport | None, name: str, status: str) -> list[str]:
    if rep is None:
        return [name, "", "", "", "", "", status]
    return [rep.name, f"{rep.value:.6f}", f"{rep.abs_error_estimate:.3e}", rep.method,
            "" if rep.n_reps is None else str(rep.n_reps), "" if rep.seed is None else str(rep.seed), status]


def _metric_rows(cfg: RunConfig, spec: MetricSpec, s_new: Optional[float]) -> list[list[str]]:
    try:
        design = cfg.build_design(spec.analysis_prior, s_new)
        dp = cfg.design_priors.get(spec.design_prior) if spec.design_prior else None
        truth = spec.truth
        req = M.MetricRequest(spec.metric, design, dp, delta_star=spec.delta_star, truth=truth,
                              name=spec.name, scan_range=spec.range)
        reps = []
        if spec.method in ("quadrature", "both"):
            reps += M.evaluate(req, tol=cfg.quadrature_tol, mc_reps=cfg.mc_reps, seed=cfg.seed)
        if spec.method in ("monte_carlo", "both"):
            mc = M.evaluate(req, method="monte_carlo", mc_reps=cfg.mc_reps, seed=cfg.seed)
            if spec.method == "both":
                mc = [M.MetricReport(r.name + ".mc", r.value, r.abs_error_estimate, r.method, r.n_reps, r.seed)
                      for r in mc]
            reps += mc
        return [_format_row(r, r.name, "ok") for r in reps]
    except Exception as exc:  # recorded per row; the run continues
        msg = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
        return [_format_row(None, spec.name, msg)]


def _curve(cfg: RunConfig, spec: CurveSpec, s_new: Optional[float]):
    design = cfg.build_design(spec.analysis_prior, s_new)
    grid = np.linspace(spec.range[0], spec.range[1], spec.points)
    if spec.metric == "classical_type1" and design.mode == "control":
        return M.classical_type1(design, grid, cfg.quadrature_tol)
    return M.power_curve(design, grid, spec.delta_star, cfg.quadrature_tol)


def write_curve(path, x, y) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truth", "value"])
        for a, b in zip(x, y):
            w.writerow([f"{a:.6f}", f"{b:.6f}"])


def run(cfg: RunConfig, out_dir=None, *, jobs: int = 1) -> int:
    """Evaluate every metric and curve; write ``report.csv``, curves and ``manifest.json``.

    Returns 0 when every row succeeded and 3 otherwise. Failed metrics are
    kept as rows whose ``status`` column carries the error.
    """
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")

    s_new = cfg.solved_s_new()
    if jobs > 1 and len(cfg.metrics) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            # map preserves submission order, so the report does not depend on scheduling
            blocks = list(ex.map(_metric_rows, [cfg] * len(cfg.metrics), cfg.metrics,
                                 [s_new] * len(cfg.metrics)))
    else:
        blocks = [_metric_rows(cfg, m, s_new) for m in cfg.metrics]
    rows = [r for b in blocks for r in b]
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)

    failures = sum(r[-1] != "ok" for r in rows)
    curve_files = []
    for c in cfg.curves:
        try:
            x, y = _curve(cfg, c, s_new)
            fname = f"curve_{c.name}.csv"
            write_curve(out / fname, x, y)
            curve_files.append(fname)
        except Exception as exc:
            failures += 1
            curve_files.append(f"curve_{c.name}: error: {exc}")

    manifest = {
        "tool": "borrowoc",
        "version": __version__,
        "backend": backend_name(),
        "seed": cfg.seed,
        "quadrature_tol": cfg.quadrature_tol,
        "mc_reps": cfg.mc_reps,
        "s_new": s_new,
        "rows": len(rows),
        "failures": failures,
        "curves": curve_files,
        "config": cfg.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return 0 if failures == 0 else 3
