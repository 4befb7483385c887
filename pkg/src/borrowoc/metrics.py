"""Operating characteristics of borrowing designs.

Quadrature is the primary route. Every metric reduces to integrals of an
analytic normal tail against the sampling distribution and the design prior:

* contrast designs: ``CP(delta) = Pr(ybar beyond ybar* | delta)`` is closed
  form, and one adaptive integral over the design prior remains;
* control designs: ``CP(theta_c, theta_t)`` integrates the treatment-arm
  tail beyond ``ybar_t*(ybar_c)`` over ``ybar_c``. For a normal-mixture
  design prior on ``theta_c`` the ``theta_c`` integral is done analytically
  per component (``theta_c | ybar_c`` is normal), leaving one integral over
  ``ybar_c``. Truncated design priors use the nested form.

:func:`mc_crosscheck` estimates the same quantities by simulation and is the
fallback when a success region is not a half-line.
"""

from __future__ import annotations

import math
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .design import (
    ContrastBorrowDesign,
    ControlBorrowDesign,
    MonotonicityError,
    canonical_critical_curve,
    critical_value,
    is_success,
)
from .mixture import MixtureNormal, TruncatedMixture
from .quadrature import integrate

Design = Union[ContrastBorrowDesign, ControlBorrowDesign]

DEFAULT_TOL = 1e-6
HULL = 12.0
CURVE_POINTS = 201
MC_CHUNK = 1 << 18

METRICS = (
    "conditional_power", "classical_type1", "average_type1", "average_power",
    "average_type1_null", "preposterior_fp", "upper_bound_fp", "decision_table",
    "prior_prob_benefit", "scan_max", "scan_min",
)


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignPrior:
    """Distribution of the true parameter used to evaluate a design.

    ``kind`` is one of ``mixture``, ``truncated_mixture``, ``point_mass`` or
    ``spike_and_slab``. A truncated prior keeps the mixture on
    ``[lower, upper]``; :meth:`truncated` builds the usual one-sided cut.
    """

    kind: str
    mixture: Optional[MixtureNormal] = None
    lower: float = -math.inf
    upper: float = math.inf
    location: Optional[float] = None
    spike_weight: Optional[float] = None
    slab: Optional[MixtureNormal] = None

    def __post_init__(self):
        k = self.kind
        if k == "mixture":
            ok = self.mixture is not None and self.location is None and self.slab is None
        elif k == "truncated_mixture":
            ok = self.mixture is not None and self.location is None and self.slab is None
            if ok:
                TruncatedMixture(self.mixture, self.lower, self.upper)
        elif k == "point_mass":
            ok = self.location is not None and self.mixture is None and self.slab is None
        elif k == "spike_and_slab":
            ok = (self.location is not None and self.slab is not None and self.mixture is None
                  and self.spike_weight is not None and 0.0 <= self.spike_weight <= 1.0)
        else:
            raise ValueError(f"unknown design prior kind {k!r}")
        if not ok:
            raise ValueError(f"design prior of kind {k!r} has missing or extra fields")

    @classmethod
    def from_mixture(cls, m: MixtureNormal) -> "DesignPrior":
        return cls("mixture", mixture=m)

    @classmethod
    def truncated(cls, m: MixtureNormal, cut: float, keep: str = "below") -> "DesignPrior":
        if keep == "below":
            return cls("truncated_mixture", mixture=m, upper=float(cut))
        if keep == "above":
            return cls("truncated_mixture", mixture=m, lower=float(cut))
        raise ValueError("keep must be 'below' or 'above'")

    @classmethod
    def point_mass(cls, x: float) -> "DesignPrior":
        return cls("point_mass", location=float(x))

    @classmethod
    def spike_and_slab(cls, location: float, spike_weight: float, slab: MixtureNormal) -> "DesignPrior":
        return cls("spike_and_slab", location=float(location), spike_weight=float(spike_weight), slab=slab)

    def reflect(self) -> "DesignPrior":
        if self.kind == "mixture":
            return DesignPrior("mixture", mixture=self.mixture.reflect())
        if self.kind == "truncated_mixture":
            return DesignPrior("truncated_mixture", mixture=self.mixture.reflect(),
                               lower=-self.upper, upper=-self.lower)
        if self.kind == "point_mass":
            return DesignPrior("point_mass", location=-self.location)
        return DesignPrior("spike_and_slab", location=-self.location, spike_weight=self.spike_weight,
                           slab=self.slab.reflect())

    @property
    def truncated_mixture(self) -> TruncatedMixture:
        return TruncatedMixture(self.mixture, self.lower, self.upper)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "mixture":
            return self.mixture.sample(n, rng)
        if self.kind == "truncated_mixture":
            return self.truncated_mixture.sample(n, rng)
        if self.kind == "point_mass":
            return np.full(n, self.location)
        spike = rng.random(n) < self.spike_weight
        out = self.slab.sample(n, rng)
        out[spike] = self.location
        return out

    def null_mass(self, delta_null: float, direction: str = "greater") -> float:
        """Probability that the parameter is null or harmful."""
        if self.kind == "spike_and_slab":
            return float(self.spike_weight)
        if self.kind == "point_mass":
            harmful = self.location <= delta_null if direction == "greater" else self.location >= delta_null
            return float(harmful)
        dist = self.mixture if self.kind == "mixture" else self.truncated_mixture
        return float(dist.cdf(delta_null) if direction == "greater" else 1.0 - dist.cdf(delta_null))


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    abs_error_estimate: float
    method: str = "quadrature"
    n_reps: Optional[int] = None
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not -1e-9 <= self.value <= 1 + 1e-9:
            raise ValueError(f"metric {self.name!r} value {self.value} outside [0, 1]")
        if self.abs_error_estimate < 0:
            raise ValueError("abs_error_estimate must be non-negative")
        object.__setattr__(self, "value", float(min(max(self.value, 0.0), 1.0)))


@dataclass(frozen=True)
class MetricRequest:
    """One metric evaluation, independent of the computation route."""

    metric: str
    design: Design
    design_prior: Optional[DesignPrior] = None
    delta_star: Optional[float] = None
    truth: Optional[object] = None
    name: Optional[str] = None
    scan_range: Optional[tuple] = None

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")

    @property
    def label(self) -> str:
        return self.name or self.metric


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------


def _as_design_prior(p) -> DesignPrior:
    if isinstance(p, DesignPrior):
        return p
    if isinstance(p, MixtureNormal):
        return DesignPrior.from_mixture(p)
    if isinstance(p, TruncatedMixture):
        return DesignPrior("truncated_mixture", mixture=p.mixture, lower=p.lower, upper=p.upper)
    raise TypeError(f"cannot interpret {type(p).__name__} as a design prior")


def _canonical_prior(design: Design, p: DesignPrior) -> DesignPrior:
    return p if design.rule.sign > 0 else p.reflect()


def _integrate_prior(f, prior: DesignPrior, tol: float, breakpoints=()) -> tuple[float, float]:
    """``E_prior[f]`` for mixture or truncated priors, per component over a +-12 sd hull."""
    if prior.kind == "point_mass":
        return float(np.asarray(f(np.array([prior.location])))[0]), 0.0
    if prior.kind == "spike_and_slab":
        raise ValueError("spike-and-slab design priors are only supported by upper_bound_fp")
    mix = prior.mixture
    lower, upper = prior.lower, prior.upper
    mass = TruncatedMixture(mix, lower, upper).mass if prior.kind == "truncated_mixture" else 1.0
    total = 0.0
    err = 0.0
    for w, m, s in zip(mix.weights, mix.means, mix.sds):
        a = max(m - HULL * s, lower)
        b = min(m + HULL * s, upper)
        if b <= a:
            continue

        def g(x, m=m, s=s):
            z = (x - m) / s
            return f(x) * np.exp(-0.5 * z * z) / (s * math.sqrt(2 * math.pi))

        res = integrate(g, a, b, breakpoints=[*breakpoints, m], tol=tol / mix.n_components * mass)
        total += w * res.value
        err += w * res.abs_error
    return total / mass, err / mass


# --------------------------------------------------------------------------
# contrast designs
# --------------------------------------------------------------------------


def _contrast_cp_canonical(design: ContrastBorrowDesign):
    ystar = design.rule.sign * critical_value(design)
    s = design.s_new

    def cp(delta):
        return ndtr((np.asarray(delta, dtype=float) - ystar) / s)

    return cp, ystar


def _contrast_average(design, prior: DesignPrior, tol) -> tuple[float, float]:
    cp, ystar = _contrast_cp_canonical(design)
    s = design.s_new
    bps = [ystar + k * s for k in (-4.0, -2.0, 0.0, 2.0, 4.0)]
    return _integrate_prior(cp, _canonical_prior(design, prior), tol, bps)


# --------------------------------------------------------------------------
# control designs
# --------------------------------------------------------------------------


def _require_single_treatment_component(design: ControlBorrowDesign):
    if design.prior_t.n_components > 1:
        raise MonotonicityError(
            "quadrature needs a single-component treatment prior (monotone boundary); "
            "use the Monte Carlo path")


def _control_component_average(design: ControlBorrowDesign, m: float, v: float, dstar: float, tol: float):
    """Canonical ``E[CP]`` for ``theta_c ~ N(m, v)`` (``v = 0`` is a point mass) and ``theta_t = theta_c + dstar``."""
    se_t2 = design.se_t ** 2
    se_c2 = design.se_c ** 2
    marg_sd = math.sqrt(v + se_c2)
    shrink = v / (v + se_c2)
    post_var = v * se_c2 / (v + se_c2)
    scale = math.sqrt(se_t2 + post_var)

    def g(y):
        tstar = canonical_critical_curve(design, y)
        mu = m + shrink * (y - m)
        z = (y - m) / marg_sd
        dens = np.exp(-0.5 * z * z) / (marg_sd * math.sqrt(2 * math.pi))
        return dens * ndtr((mu + dstar - tstar) / scale)

    _, pc = design.canonical_priors()
    a, b = m - HULL * marg_sd, m + HULL * marg_sd
    bps = [m]
    for pm, ps in zip(pc.means, pc.sds):
        bps.extend(pm + k * ps for k in (-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0))
    res = integrate(g, a, b, breakpoints=bps, tol=tol)
    return res.value, res.abs_error


def _control_cp_canonical(design, theta_c: float, theta_t: float, tol: float):
    return _control_component_average(design, theta_c, 0.0, theta_t - theta_c, tol)


def _control_average(design: ControlBorrowDesign, prior: DesignPrior, delta_star: float, tol: float):
    _require_single_treatment_component(design)
    cprior = _canonical_prior(design, prior)
    dstar = design.rule.sign * delta_star
    if cprior.kind == "point_mass":
        return _control_cp_canonical(design, cprior.location, cprior.location + dstar, tol)
    if cprior.kind == "mixture":
        mix = cprior.mixture
        total = 0.0
        err = 0.0
        for w, m, v in zip(mix.weights, mix.means, mix.variances):
            val, e = _control_component_average(design, float(m), float(v), dstar, tol / mix.n_components)
            total += w * val
            err += w * e
        return total, err
    if cprior.kind == "truncated_mixture":
        inner_err = [0.0]

        def cp_vec(thetas):
            out = np.empty_like(thetas)
            for i, th in enumerate(thetas):
                out[i], e = _control_cp_canonical(design, float(th), float(th) + dstar, tol)
                inner_err[0] = max(inner_err[0], e)
            return out

        val, err = _integrate_prior(cp_vec, cprior, tol)
        return val, err + inner_err[0]
    raise ValueError("spike-and-slab design priors are only supported by upper_bound_fp")


# --------------------------------------------------------------------------
# public metric functions
# --------------------------------------------------------------------------


def conditional_power(design: Design, truth, tol: float = DEFAULT_TOL) -> float:
    """Probability of success at fixed true values.

    ``truth`` is the contrast for contrast designs and ``(theta_c, theta_t)``
    for control designs.
    """
    sgn = design.rule.sign
    if design.mode == "contrast":
        cp, _ = _contrast_cp_canonical(design)
        return float(cp(sgn * float(truth)))
    theta_c, theta_t = truth
    _require_single_treatment_component(design)
    val, _ = _control_cp_canonical(design, sgn * float(theta_c), sgn * float(theta_t), tol)
    return float(min(max(val, 0.0), 1.0))


def classical_type1(design: Design, drift_grid=None, tol: float = DEFAULT_TOL):
    """Pointwise classical type I error.

    Contrast designs return ``(array([delta_null]), array([CP]))``. Control
    designs return the curve ``CP(theta_c, theta_c + delta_null)`` over
    ``drift_grid`` (a sequence of ``theta_c`` values).
    """
    d0 = design.rule.delta_null
    if design.mode == "contrast":
        return np.array([d0]), np.array([conditional_power(design, d0)])
    if drift_grid is None:
        raise ValueError("control designs need a grid of theta_c values")
    grid = np.asarray(drift_grid, dtype=float)
    vals = np.array([conditional_power(design, (th, th + d0), tol) for th in grid])
    return grid, vals


def power_curve(design: Design, grid, delta_star: float | None = None, tol: float = DEFAULT_TOL):
    """``CP`` along a grid of contrasts (contrast designs) or control means (control designs)."""
    grid = np.asarray(grid, dtype=float)
    if design.mode == "contrast":
        return grid, np.array([conditional_power(design, d) for d in grid])
    ds = design.rule.delta_null if delta_star is None else delta_star
    return grid, np.array([conditional_power(design, (th, th + ds), tol) for th in grid])


def average_metric(design: Design, design_prior, delta_star: float | None = None, *,
                   tol: float = DEFAULT_TOL, name: str = "average_metric",
                   mc_reps: int = 1_000_000, seed: int = 0) -> MetricReport:
    """``CP`` averaged over the design prior.

    Control designs: the prior is over ``theta_c`` and ``theta_t = theta_c +
    delta_star`` (``delta_star`` defaults to ``delta_null``, the average type I
    error). Contrast designs: the prior is over the contrast; ``delta_star`` is
    ignored.
    """
    prior = _as_design_prior(design_prior)
    if prior.kind == "spike_and_slab":
        raise ValueError("average_metric does not accept spike-and-slab priors; use upper_bound_fp")
    ds = design.rule.delta_null if delta_star is None else float(delta_star)
    try:
        if design.mode == "contrast":
            val, err = _contrast_average(design, prior, tol)
        else:
            val, err = _control_average(design, prior, ds, tol)
    except MonotonicityError as exc:
        req = MetricRequest("average_power", design, prior, delta_star=ds, name=name)
        return _fallback(req, exc, mc_reps, seed)
    return MetricReport(name, val, err)


def scan_extremum(design: ControlBorrowDesign, scan_range, which: str = "max",
                  delta_star: float | None = None, points: int = CURVE_POINTS,
                  tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """Extremum of ``CP(theta_c, theta_c + delta_star)`` over ``scan_range``.

    A coarse grid locates the extremum, then a bounded scalar search
    polishes it between the neighbouring grid points.
    """
    if which not in ("max", "min"):
        raise ValueError("which must be 'max' or 'min'")
    lo, hi = map(float, scan_range)
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError("scan range must be a finite interval")
    ds = design.rule.delta_null if delta_star is None else float(delta_star)
    if design.mode == "contrast":
        v = conditional_power(design, ds)
        return ds, v
    sgn = 1.0 if which == "max" else -1.0

    def f(th):
        return conditional_power(design, (th, th + ds), tol)

    grid = np.linspace(lo, hi, points)
    vals = np.array([f(t) for t in grid])
    i = int(np.argmax(sgn * vals))
    best_x, best_v = float(grid[i]), float(vals[i])
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, points - 1)]
    res = minimize_scalar(lambda t: -sgn * f(t), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-6 * (hi - lo)})
    if res.success and -res.fun > sgn * best_v:
        best_x, best_v = float(res.x), float(-sgn * res.fun)
    return best_x, best_v


def _null_truncation(design: ContrastBorrowDesign, p: MixtureNormal) -> DesignPrior:
    keep = "below" if design.rule.sign > 0 else "above"
    return DesignPrior.truncated(p, design.rule.delta_null, keep=keep)


def average_type1_null(design: ContrastBorrowDesign, p: MixtureNormal, *, tol: float = DEFAULT_TOL,
                       name: str = "average_type1_null") -> MetricReport:
    """Average type I error under ``p`` truncated to null-or-harmful values and renormalised."""
    if design.mode != "contrast":
        raise TypeError("average_type1_null applies to contrast designs")
    mass = prior_prob_null(p, design.rule.delta_null, design.rule.direction)
    if not mass > 0:
        raise ValueError("design prior has zero mass on null/harmful values: "
                         "the truncation normaliser Pr(delta <= delta_null) is 0")
    prior = _null_truncation(design, p)
    val, err = _contrast_average(design, prior, tol)
    return MetricReport(name, val, err, extra={"null_mass": mass})


def _contrast_split(design: ContrastBorrowDesign, p: MixtureNormal, tol: float):
    """Unnormalised integrals of CP over the null and benefit half-lines (canonical)."""
    cp, ystar = _contrast_cp_canonical(design)
    s = design.s_new
    cprior = p if design.rule.sign > 0 else p.reflect()
    d0 = design.rule.sign * design.rule.delta_null
    bps = [ystar + k * s for k in (-4.0, -2.0, 0.0, 2.0, 4.0)]
    null_mass = float(cprior.cdf(d0))
    fp = tp = 0.0
    err = 0.0
    if null_mass > 0:
        v, e = _integrate_prior(cp, DesignPrior("truncated_mixture", mixture=cprior, upper=d0), tol, bps)
        fp, err = v * null_mass, e * null_mass
    if null_mass < 1:
        v, e = _integrate_prior(cp, DesignPrior("truncated_mixture", mixture=cprior, lower=d0), tol, bps)
        tp, err = v * (1 - null_mass), err + e * (1 - null_mass)
    return fp, tp, null_mass, err


def preposterior_fp(design: ContrastBorrowDesign, p: MixtureNormal, *, tol: float = DEFAULT_TOL,
                    name: str = "preposterior_fp") -> MetricReport:
    """Joint probability that the effect is null or harmful and the trial succeeds."""
    if design.mode != "contrast":
        raise TypeError("preposterior_fp applies to contrast designs")
    cp, ystar = _contrast_cp_canonical(design)
    cprior = p if design.rule.sign > 0 else p.reflect()
    d0 = design.rule.sign * design.rule.delta_null
    mass = float(cprior.cdf(d0))
    if mass <= 0:
        return MetricReport(name, 0.0, 0.0, extra={"null_mass": 0.0})
    bps = [ystar + k * design.s_new for k in (-4.0, -2.0, 0.0, 2.0, 4.0)]
    # direct integral of CP * p over the null half-line, unnormalised
    total = 0.0
    err = 0.0
    for w, m, s in zip(cprior.weights, cprior.means, cprior.sds):
        a, b = m - HULL * s, min(m + HULL * s, d0)
        if b <= a:
            continue

        def g(x, m=m, s=s):
            z = (x - m) / s
            return cp(x) * np.exp(-0.5 * z * z) / (s * math.sqrt(2 * math.pi))

        res = integrate(g, a, b, breakpoints=[*bps, m], tol=tol * mass / cprior.n_components)
        total += w * res.value
        err += w * res.abs_error
    via_avg = average_type1_null(design, p, tol=tol).value * mass
    gap = abs(total - via_avg)
    return MetricReport(name, total, err, extra={"null_mass": mass, "via_average_null": via_avg,
                                                 "identity_gap": gap})


def prior_prob_null(p, delta_null: float, direction: str = "greater") -> float:
    if isinstance(p, DesignPrior):
        return p.null_mass(delta_null, direction)
    return float(p.cdf(delta_null) if direction == "greater" else p.sf(delta_null))


def upper_bound_fp(design: ContrastBorrowDesign, p, *, name: str = "upper_bound_fp") -> MetricReport:
    """Classical type I error times the design-prior probability of a null or harmful effect."""
    if design.mode != "contrast":
        raise TypeError("upper_bound_fp applies to contrast designs")
    cp0 = conditional_power(design, design.rule.delta_null)
    mass = prior_prob_null(p, design.rule.delta_null, design.rule.direction)
    return MetricReport(name, cp0 * mass, 0.0, extra={"classical_type1": cp0, "null_mass": mass})


def decision_table(design: ContrastBorrowDesign, p: MixtureNormal, *, tol: float = DEFAULT_TOL) -> dict:
    """Joint probabilities of (truth, decision): ``p_FP``, ``p_TP``, ``p_TN``, ``p_FN``."""
    if design.mode != "contrast":
        raise TypeError("decision_table applies to contrast designs")
    fp, tp, mass, _ = _contrast_split(design, p, tol)
    return {"p_FP": fp, "p_TP": tp, "p_TN": mass - fp, "p_FN": (1.0 - mass) - tp}


def prior_prob_benefit(p: MixtureNormal, delta_null: float = 0.0, direction: str = "greater") -> float:
    """Prior mass on beneficial values of the contrast."""
    return float(p.sf(delta_null) if direction == "greater" else p.cdf(delta_null))


# --------------------------------------------------------------------------
# Monte Carlo route
# --------------------------------------------------------------------------


def stream_id(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def make_rng(seed: int, label: str) -> np.random.Generator:
    """Counter-based generator with a per-metric stream derived from ``label``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_id(label),))
    return np.random.Generator(np.random.Philox(ss))


def _chunks(n: int):
    done = 0
    while done < n:
        k = min(MC_CHUNK, n - done)
        yield k
        done += k


def _simulate_contrast(design, draw_truth, n, rng):
    """Counts of (null & success), (null), (success) over ``n`` joint draws."""
    d0 = design.rule.delta_null
    sgn = design.rule.sign
    c_null_succ = c_null = c_succ = 0
    for k in _chunks(n):
        delta = draw_truth(k, rng)
        y = delta + design.s_new * rng.standard_normal(k)
        succ = is_success(design, y)
        null = sgn * (delta - d0) <= 0
        c_null_succ += int(np.count_nonzero(succ & null))
        c_null += int(np.count_nonzero(null))
        c_succ += int(np.count_nonzero(succ))
    return c_null_succ, c_null, c_succ


def _simulate_control(design, draw_theta_c, delta_star, n, rng):
    succ_count = 0
    for k in _chunks(n):
        th_c = draw_theta_c(k, rng)
        th_t = th_c + delta_star
        yc = th_c + design.se_c * rng.standard_normal(k)
        yt = th_t + design.se_t * rng.standard_normal(k)
        succ_count += int(np.count_nonzero(is_success(design, (yt, yc))))
    return succ_count


def _binom(name, count, n, seed, scale=1.0, extra=None):
    p = count / n
    se = math.sqrt(p * (1 - p) / n)
    return MetricReport(name, p * scale, se * scale, method="monte_carlo", n_reps=n, seed=seed,
                        extra=extra or {})


def mc_crosscheck(req: MetricRequest, n_reps: int = 1_000_000, seed: int = 0) -> list[MetricReport]:
    """Simulation estimate of ``req``: draw truth, draw data, apply the success rule.

    ``abs_error_estimate`` is the binomial standard error ``sqrt(p(1-p)/n)``.
    """
    if n_reps < 10_000:
        raise ValueError("n_reps must be at least 1e4")
    design = req.design
    rng = make_rng(seed, req.label)
    name = req.label
    m = req.metric
    fixed = lambda x: (lambda k, r: np.full(k, float(x)))

    if m == "prior_prob_benefit":
        prior = _as_design_prior(req.design_prior)
        draws = prior.sample(n_reps, rng)
        d0 = design.rule.delta_null
        c = int(np.count_nonzero(design.rule.sign * (draws - d0) > 0))
        return [_binom(name, c, n_reps, seed)]

    if design.mode == "contrast":
        d0 = design.rule.delta_null
        if m in ("conditional_power", "classical_type1", "scan_max", "scan_min"):
            x = d0 if (m != "conditional_power" or req.truth is None) else float(req.truth)
            _, _, c = _simulate_contrast(design, fixed(x), n_reps, rng)
            return [_binom(name, c, n_reps, seed)]
        prior = _as_design_prior(req.design_prior)
        if m in ("average_type1", "average_power"):
            _, _, c = _simulate_contrast(design, prior.sample, n_reps, rng)
            return [_binom(name, c, n_reps, seed)]
        if m == "average_type1_null":
            tprior = _null_truncation(design, prior.mixture)
            _, _, c = _simulate_contrast(design, tprior.sample, n_reps, rng)
            return [_binom(name, c, n_reps, seed)]
        if m == "preposterior_fp":
            c, _, _ = _simulate_contrast(design, prior.sample, n_reps, rng)
            return [_binom(name, c, n_reps, seed)]
        if m == "upper_bound_fp":
            _, _, c = _simulate_contrast(design, fixed(d0), n_reps, rng)
            mass = prior.null_mass(d0, design.rule.direction)
            return [_binom(name, c, n_reps, seed, scale=mass)]
        if m == "decision_table":
            fp, nul, succ = _simulate_contrast(design, prior.sample, n_reps, rng)
            tp = succ - fp
            tn = nul - fp
            fn = n_reps - nul - tp
            return [_binom(f"{name}.{k}", c, n_reps, seed)
                    for k, c in (("p_FP", fp), ("p_TP", tp), ("p_TN", tn), ("p_FN", fn))]
        raise ValueError(f"metric {m!r} has no Monte Carlo route")

    # control designs
    d0 = design.rule.delta_null
    if m in ("conditional_power", "classical_type1"):
        if m == "conditional_power":
            th_c, th_t = req.truth
        else:
            th_c = float(req.truth)
            th_t = th_c + d0
        c = _simulate_control(design, fixed(th_c), float(th_t) - float(th_c), n_reps, rng)
        return [_binom(name, c, n_reps, seed)]
    if m in ("average_type1", "average_power"):
        prior = _as_design_prior(req.design_prior)
        ds = d0 if (m == "average_type1" or req.delta_star is None) else float(req.delta_star)
        c = _simulate_control(design, prior.sample, ds, n_reps, rng)
        return [_binom(name, c, n_reps, seed)]
    raise ValueError(f"metric {m!r} has no Monte Carlo route for control designs")


def _fallback(req: MetricRequest, exc: Exception, mc_reps: int, seed: int) -> MetricReport:
    warnings.warn(f"{req.label}: {exc}; switching to Monte Carlo", RuntimeWarning, stacklevel=3)
    rep = mc_crosscheck(req, mc_reps, seed)[0]
    return MetricReport(rep.name, rep.value, rep.abs_error_estimate, rep.method, rep.n_reps, rep.seed,
                        extra={"note": f"quadrature unavailable: {exc}"})


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------


def evaluate(req: MetricRequest, *, method: str = "quadrature", tol: float = DEFAULT_TOL,
             mc_reps: int = 1_000_000, seed: int = 0) -> list[MetricReport]:
    """Evaluate one request, returning one report per scalar output."""
    if method == "monte_carlo":
        return mc_crosscheck(req, mc_reps, seed)
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    design = req.design
    name = req.label
    m = req.metric
    d0 = design.rule.delta_null
    try:
        if m == "conditional_power":
            return [MetricReport(name, conditional_power(design, req.truth, tol), tol)]
        if m == "classical_type1":
            if design.mode == "contrast":
                return [MetricReport(name, conditional_power(design, d0), 0.0)]
            th = float(req.truth)
            return [MetricReport(name, conditional_power(design, (th, th + d0), tol), tol)]
        if m in ("average_type1", "average_power"):
            ds = d0 if (m == "average_type1" or req.delta_star is None) else req.delta_star
            return [average_metric(design, req.design_prior, ds, tol=tol, name=name,
                                   mc_reps=mc_reps, seed=seed)]
        if m in ("scan_max", "scan_min"):
            rng_ = req.scan_range
            if rng_ is None:
                raise ValueError(f"{name}: scan metrics need a range")
            x, v = scan_extremum(design, rng_, "max" if m == "scan_max" else "min", req.delta_star, tol=tol)
            return [MetricReport(name, v, tol, extra={"argext": x})]
        prior = req.design_prior
        if m == "prior_prob_benefit":
            p = _as_design_prior(prior)
            return [MetricReport(name, 1.0 - p.null_mass(d0, design.rule.direction), 0.0)]
        if m == "upper_bound_fp":
            return [upper_bound_fp(design, prior if prior.kind == "spike_and_slab" else prior.mixture, name=name)]
        if prior.kind != "mixture":
            raise ValueError(f"{name}: metric {m!r} needs an untruncated mixture design prior")
        if m == "average_type1_null":
            return [average_type1_null(design, prior.mixture, tol=tol, name=name)]
        if m == "preposterior_fp":
            return [preposterior_fp(design, prior.mixture, tol=tol, name=name)]
        if m == "decision_table":
            fp, tp, mass, err = _contrast_split(design, prior.mixture, tol)
            vals = {"p_FP": fp, "p_TP": tp, "p_TN": mass - fp, "p_FN": (1.0 - mass) - tp}
            return [MetricReport(f"{name}.{k}", v, err) for k, v in vals.items()]
    except MonotonicityError as exc:
        return [_fallback(req, exc, mc_reps, seed)]
    raise ValueError(f"metric {m!r} not supported for {design.mode} designs")
