"""Grid search over design parameters for designs that keep a risk metric below a target."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import metrics as M
from .design import ContrastBorrowDesign, ControlBorrowDesign, SuccessRule
from .mixture import MixtureNormal, NormalComponent

FREE_PARAMETERS = ("robust_weight", "n_t", "n_c", "s_new_scale")
CALIBRATION_METRICS = ("average_type1", "average_type1_null", "preposterior_fp", "upper_bound_fp")


def mix_weight(informative: MixtureNormal, robust: NormalComponent, w: float) -> MixtureNormal:
    """``w * informative + (1 - w) * robust``; the endpoints drop the absent part."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"weight must lie in [0, 1], got {w}")
    if w == 1.0:
        return informative
    if w == 0.0:
        return MixtureNormal.normal(robust.mean, robust.sd)
    return MixtureNormal(
        np.append(w * informative.weights, 1.0 - w),
        np.append(informative.means, robust.mean),
        np.append(informative.sds, robust.sd),
    )


@dataclass(frozen=True)
class CalibrationRequest:
    """Grid search specification.

    ``grid`` maps each free parameter to ``(lo, hi, steps)``. ``robust_weight``
    requires ``informative`` and ``robust`` (the mixture is rebuilt at each
    weight); ``alternative`` is the truth at which power is reported.
    """

    base_design: ContrastBorrowDesign | ControlBorrowDesign
    metric: str
    design_prior: M.DesignPrior
    target: float
    grid: dict
    alternative: object
    informative: Optional[MixtureNormal] = None
    robust: Optional[NormalComponent] = None
    tol: float = M.DEFAULT_TOL

    def __post_init__(self):
        if not 0.0 < self.target < 1.0:
            raise ValueError("target must lie in (0, 1)")
        if self.metric not in CALIBRATION_METRICS:
            raise ValueError(f"metric must be one of {CALIBRATION_METRICS}")
        if not self.grid:
            raise ValueError("grid must contain at least one free parameter")
        for p, spec in self.grid.items():
            if p not in FREE_PARAMETERS:
                raise ValueError(f"unknown free parameter {p!r}")
            lo, hi, steps = spec
            if int(steps) < 1 or hi < lo:
                raise ValueError(f"grid for {p!r} is empty")
        mode = self.base_design.mode
        if mode == "contrast" and ({"n_t", "n_c"} & set(self.grid)):
            raise ValueError("n_t/n_c are free parameters of control designs only")
        if mode == "control" and "s_new_scale" in self.grid:
            raise ValueError("s_new_scale is a free parameter of contrast designs only")
        if "robust_weight" in self.grid and (self.informative is None or self.robust is None):
            raise ValueError("robust_weight needs the informative mixture and the robust component")

    def axes(self) -> dict:
        out = {}
        for p, (lo, hi, steps) in self.grid.items():
            vals = np.linspace(float(lo), float(hi), int(steps))
            if p in ("n_t", "n_c"):
                vals = np.unique(np.rint(vals).astype(int))
            out[p] = vals
        return out


@dataclass(frozen=True)
class FrontierPoint:
    params: dict
    metric: float
    power: float

    def total_n(self, design) -> int:
        if design.mode != "control":
            return 0
        return int(self.params.get("n_t", design.n_t)) + int(self.params.get("n_c", design.n_c))


@dataclass(frozen=True)
class CalibrationResult:
    frontier: list
    evaluated: list = field(repr=False)
    min_metric: float = math.nan
    min_params: dict = field(default_factory=dict)


def build_design(base, params: dict, informative=None, robust=None):
    d = base
    if "robust_weight" in params:
        mix = mix_weight(informative, robust, float(params["robust_weight"]))
        d = d.with_prior(mix)
    if "s_new_scale" in params:
        d = replace(d, s_new=base.s_new * float(params["s_new_scale"]))
    if "n_t" in params:
        d = replace(d, n_t=int(params["n_t"]))
    if "n_c" in params:
        d = replace(d, n_c=int(params["n_c"]))
    return d


def metric_value(design, metric: str, design_prior: M.DesignPrior, tol: float = M.DEFAULT_TOL) -> float:
    if metric == "average_type1":
        return M.average_metric(design, design_prior, tol=tol).value
    if metric == "upper_bound_fp":
        p = design_prior if design_prior.kind == "spike_and_slab" else design_prior.mixture
        return M.upper_bound_fp(design, p).value
    if design_prior.kind != "mixture":
        raise ValueError(f"{metric} needs an untruncated mixture design prior")
    if metric == "average_type1_null":
        return M.average_type1_null(design, design_prior.mixture, tol=tol).value
    if metric == "preposterior_fp":
        return M.preposterior_fp(design, design_prior.mixture, tol=tol).value
    raise ValueError(f"unknown calibration metric {metric!r}")


def _power(design, alternative, tol) -> float:
    if design.mode == "contrast":
        return M.conditional_power(design, float(alternative))
    th_c, th_t = alternative
    return M.conditional_power(design, (float(th_c), float(th_t)), tol)


def calibrate(req: CalibrationRequest) -> CalibrationResult:
    """Evaluate every grid point; keep those with ``metric <= target``.

    The frontier is sorted by power at the alternative (descending), then by
    larger robust weight, then by smaller total sample size.
    """
    axes = req.axes()
    names = list(axes)
    evaluated = []
    for combo in itertools.product(*(axes[n] for n in names)):
        params = {n: (int(v) if n in ("n_t", "n_c") else float(v)) for n, v in zip(names, combo)}
        d = build_design(req.base_design, params, req.informative, req.robust)
        val = metric_value(d, req.metric, req.design_prior, req.tol)
        evaluated.append(FrontierPoint(params, val, _power(d, req.alternative, req.tol)))
    frontier = [p for p in evaluated if p.metric <= req.target]
    frontier.sort(key=lambda p: (-p.power, -p.params.get("robust_weight", 0.0),
                                 p.total_n(req.base_design)))
    best = min(evaluated, key=lambda p: p.metric)
    return CalibrationResult(frontier, evaluated, best.metric, dict(best.params))


def max_weight_for_bound(design, design_prior: M.DesignPrior, target: float, *,
                         informative: MixtureNormal, robust: NormalComponent,
                         metric: str = "upper_bound_fp", steps: int = 21, xtol: float = 1e-4,
                         tol: float = M.DEFAULT_TOL) -> float:
    """Largest informative weight ``w`` whose metric stays at or below ``target``.

    The metric is scanned on a grid of weights; when it is non-decreasing the
    first crossing is refined by bisection to ``xtol``. A non-monotone scan
    falls back to the largest admissible grid weight, with a warning.
    """

    def f(w):
        return metric_value(design.with_prior(mix_weight(informative, robust, w)), metric, design_prior, tol)

    ws = np.linspace(0.0, 1.0, steps)
    vals = np.array([f(w) for w in ws])
    ok = vals <= target
    if ok.all():
        return 1.0
    if not ok.any():
        warnings.warn(f"no weight satisfies {metric} <= {target}; smallest value {vals.min():.6g}",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    if np.any(np.diff(vals) < -1e-12):
        warnings.warn(f"{metric} is not monotone in the weight; returning the grid frontier",
                      RuntimeWarning, stacklevel=2)
        return float(ws[ok].max())
    i = int(np.flatnonzero(~ok)[0])
    lo, hi = ws[i - 1], ws[i]
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if f(mid) <= target:
            lo = mid
        else:
            hi = mid
    return float(lo)


def solve_s_new(prior: MixtureNormal, type1: float, rule: SuccessRule = SuccessRule(), *,
                bounds: tuple = (1e-3, 10.0), branch: str = "upper", points: int = 400) -> float:
    """Standard error at which the classical type I error of a contrast design equals ``type1``.

    Type I error is not monotone in the standard error for mixture priors, so
    there can be two solutions; ``branch`` picks the larger or smaller one.
    """
    if branch not in ("upper", "lower"):
        raise ValueError("branch must be 'upper' or 'lower'")

    def g(s):
        return M.conditional_power(ContrastBorrowDesign(float(s), prior, rule), rule.delta_null) - type1

    def g_safe(s):
        try:
            return g(s)
        except M.MonotonicityError:
            return math.nan

    grid = np.geomspace(bounds[0], bounds[1], points)
    vals = np.array([g_safe(s) for s in grid])
    sgn = np.sign(vals)
    # nan products compare False, so designs without a boundary never bracket a root
    idx = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
    if idx.size == 0:
        raise ValueError(f"type I error {type1} is not attained for s in {bounds}; "
                         f"range is [{np.nanmin(vals) + type1:.4g}, {np.nanmax(vals) + type1:.4g}]")
    i = int(idx[-1] if branch == "upper" else idx[0])
    return float(brentq(g, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
