"""Two-arm trial designs and their Bayesian success rule.

A design either borrows on the control arm (independent normal-mixture priors
for each arm, known common sampling sd) or on the treatment contrast
(normal-mixture prior for the contrast, known standard error). Success is
``Pr(contrast beyond delta_null | data) >= confidence``.

"less" rules are handled by reflecting data, priors and ``delta_null`` so that
every computation below runs in the "greater" orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtri

from . import kernels
from .mixture import MixtureNormal

SCAN_POINTS = 512
SCAN_WIDTH = 12.0


class MonotonicityError(RuntimeError):
    """The success region is not a half-line, so no single boundary exists.

    Use the Monte Carlo path (``method="monte_carlo"``) for such designs.
    """


@dataclass(frozen=True)
class SuccessRule:
    delta_null: float = 0.0
    direction: str = "greater"
    confidence: float = 0.975

    def __post_init__(self):
        if self.direction not in ("greater", "less"):
            raise ValueError(f"direction must be 'greater' or 'less', got {self.direction!r}")
        if not 0.5 < self.confidence < 1.0:
            raise ValueError(f"confidence must lie in (0.5, 1), got {self.confidence}")
        if not math.isfinite(self.delta_null):
            raise ValueError("delta_null must be finite")

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "greater" else -1.0

    @property
    def alpha(self) -> float:
        return 1.0 - self.confidence


@dataclass(frozen=True)
class ContrastBorrowDesign:
    s_new: float
    prior_delta: MixtureNormal
    rule: SuccessRule = field(default_factory=SuccessRule)

    mode = "contrast"

    def __post_init__(self):
        if not (math.isfinite(self.s_new) and self.s_new > 0):
            raise ValueError(f"s_new must be positive, got {self.s_new}")

    def with_prior(self, prior: MixtureNormal) -> "ContrastBorrowDesign":
        return replace(self, prior_delta=prior)

    def canonical_prior(self) -> MixtureNormal:
        return self.prior_delta if self.rule.sign > 0 else self.prior_delta.reflect()


@dataclass(frozen=True)
class ControlBorrowDesign:
    n_t: int
    n_c: int
    sigma: float
    prior_t: MixtureNormal
    prior_c: MixtureNormal
    rule: SuccessRule = field(default_factory=SuccessRule)

    mode = "control"

    def __post_init__(self):
        if int(self.n_t) != self.n_t or int(self.n_c) != self.n_c or self.n_t < 1 or self.n_c < 1:
            raise ValueError("arm sample sizes must be positive integers")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be positive")

    @property
    def se_t(self) -> float:
        return self.sigma / math.sqrt(self.n_t)

    @property
    def se_c(self) -> float:
        return self.sigma / math.sqrt(self.n_c)

    def with_prior(self, prior_c: MixtureNormal) -> "ControlBorrowDesign":
        return replace(self, prior_c=prior_c)

    def canonical_priors(self) -> tuple[MixtureNormal, MixtureNormal]:
        if self.rule.sign > 0:
            return self.prior_t, self.prior_c
        return self.prior_t.reflect(), self.prior_c.reflect()


Design = Union[ContrastBorrowDesign, ControlBorrowDesign]


def _triple(m: MixtureNormal):
    return m.weights, m.means, m.variances


def _check_finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise ValueError("data must be finite")


def posterior_success_prob(design: Design, data):
    """Posterior probability that the contrast lies beyond ``delta_null``.

    ``data`` is the observed contrast for contrast designs and the pair
    ``(ybar_t, ybar_c)`` for control designs. Arrays are accepted and
    broadcast.
    """
    rule = design.rule
    sgn = rule.sign
    if design.mode == "contrast":
        y = np.asarray(data, dtype=float)
        _check_finite(y)
        prior = design.canonical_prior()
        out = kernels.mixture_posterior_tail(sgn * y.ravel(), *_triple(prior), design.s_new,
                                             sgn * rule.delta_null)
        return float(out[0]) if y.ndim == 0 else out.reshape(y.shape)
    yt, yc = data
    yt = np.asarray(yt, dtype=float)
    yc = np.asarray(yc, dtype=float)
    _check_finite(yt, yc)
    shape = np.broadcast_shapes(yt.shape, yc.shape)
    pt, pc = design.canonical_priors()
    out = kernels.control_posterior_tail(
        sgn * np.broadcast_to(yt, shape).ravel(), sgn * np.broadcast_to(yc, shape).ravel(),
        _triple(pt), _triple(pc), design.se_t, design.se_c, sgn * rule.delta_null)
    return float(out[0]) if len(shape) == 0 else out.reshape(shape)


def is_success(design: Design, data):
    p = posterior_success_prob(design, data)
    return p >= design.rule.confidence


def _single_crossing(x, g):
    """Bracket of the unique sign change of ``g`` from negative to positive."""
    pos = g >= 0
    changes = np.flatnonzero(pos[1:] != pos[:-1])
    if changes.size != 1 or pos[0] or not pos[-1]:
        return None
    i = int(changes[0])
    return float(x[i]), float(x[i + 1])


def _scan_grid(prior: MixtureNormal, se: float, center: float) -> np.ndarray:
    spans = [(m - SCAN_WIDTH * math.sqrt(v + se * se), m + SCAN_WIDTH * math.sqrt(v + se * se))
             for m, v in zip(prior.means, prior.variances)]
    spans.append((center - SCAN_WIDTH * se, center + SCAN_WIDTH * se))
    return np.unique(np.concatenate([np.linspace(a, b, SCAN_POINTS) for a, b in spans]))


@lru_cache(maxsize=4096)
def _snap(root: float, g, max_steps: int = 64) -> float:
    """Step the root up by ulps until it is itself a success (``g >= 0``)."""
    y = root
    for _ in range(max_steps):
        if g(np.array([y]))[0] >= 0.0:
            return y
        y = float(np.nextafter(y, math.inf))
    return root


def _canonical_critical_value(design: ContrastBorrowDesign) -> float:
    rule = design.rule
    prior = design.canonical_prior()
    d0 = rule.sign * rule.delta_null
    trip = _triple(prior)

    def g(y):
        return kernels.mixture_posterior_tail(y, *trip, design.s_new, d0) - rule.confidence

    if prior.n_components == 1:
        # closed form: the posterior tail is a probit-linear function of ybar
        v = float(prior.variances[0])
        s2 = design.s_new ** 2
        pv = 1.0 / (1.0 / v + 1.0 / s2)
        z = float(ndtri(rule.confidence))
        pm_needed = d0 + z * math.sqrt(pv)
        return _snap((pm_needed / pv - float(prior.means[0]) / v) * s2, g)
    x = _scan_grid(prior, design.s_new, d0)
    bracket = _single_crossing(x, g(x))
    if bracket is None:
        raise MonotonicityError(
            "success region of the contrast design is not a half-line on the scan grid; "
            "use the Monte Carlo path")
    root = brentq(lambda y: float(g(np.array([y]))[0]), *bracket, xtol=1e-14, rtol=4 * np.finfo(float).eps,
                  maxiter=200)
    return _snap(float(root), g)


def critical_value(design: ContrastBorrowDesign) -> float:
    """Boundary ``ybar*`` of the success region.

    Success is ``ybar >= ybar*`` for "greater" rules and ``ybar <= ybar*`` for
    "less" rules.
    """
    if design.mode != "contrast":
        raise TypeError("critical_value applies to contrast designs; use critical_curve")
    return design.rule.sign * _canonical_critical_value(design)


def _canonical_curve_general(design: ControlBorrowDesign, yc: np.ndarray) -> np.ndarray:
    rule = design.rule
    pt, pc = design.canonical_priors()
    d0 = rule.sign * rule.delta_null
    out = np.empty_like(yc)
    for i, y in enumerate(yc):
        post_c = pc.posterior(float(y), design.se_c)
        center = post_c.mean() + d0
        x = _scan_grid(pt, design.se_t, center + float(ndtri(rule.confidence)) * post_c.sd())
        g = kernels.control_posterior_tail(x, np.full_like(x, y), _triple(pt), _triple(pc),
                                           design.se_t, design.se_c, d0) - rule.confidence
        bracket = _single_crossing(x, g)
        if bracket is None:
            raise MonotonicityError(
                f"success region in ybar_t is not a half-line at ybar_c={y:g}; use the Monte Carlo path")
        out[i] = brentq(
            lambda t: float(kernels.control_posterior_tail(np.array([t]), np.array([y]), _triple(pt),
                                                           _triple(pc), design.se_t, design.se_c, d0)[0])
            - rule.confidence, *bracket, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return out


def canonical_critical_curve(design: ControlBorrowDesign, yc_canon) -> np.ndarray:
    """Boundary in canonical coordinates; success is ``ybar_t >= value``."""
    yc_canon = np.atleast_1d(np.asarray(yc_canon, dtype=float))
    pt, pc = design.canonical_priors()
    if pt.n_components > 1:
        return _canonical_curve_general(design, yc_canon)
    rule = design.rule
    return kernels.control_critical(
        yc_canon, float(pt.means[0]), float(pt.variances[0]), _triple(pc), design.se_t, design.se_c,
        rule.sign * rule.delta_null, rule.confidence, float(ndtri(rule.confidence)))


def critical_curve(design: ControlBorrowDesign, ybar_c):
    """Treatment-arm boundary ``ybar_t*(ybar_c)``.

    With a single-component treatment prior the posterior tail is strictly
    monotone in ``ybar_t``, so the boundary always exists. Mixture treatment
    priors are scanned first and raise :class:`MonotonicityError` when the
    success set is not a half-line.
    """
    if design.mode != "control":
        raise TypeError("critical_curve applies to control-borrowing designs")
    yc = np.asarray(ybar_c, dtype=float)
    _check_finite(yc)
    sgn = design.rule.sign
    out = sgn * canonical_critical_curve(design, sgn * yc.ravel())
    return float(out[0]) if yc.ndim == 0 else out.reshape(yc.shape)
