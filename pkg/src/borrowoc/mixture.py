"""Finite mixtures of normal distributions and their conjugate calculus."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri
from scipy.stats import truncnorm

_WEIGHT_TOL = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NormalComponent:
    mean: float
    sd: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.sd) and self.sd > 0):
            raise ValueError(f"invalid normal component: mean={self.mean}, sd={self.sd}")


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


class MixtureNormal:
    """Weighted sum of normal densities.

    Weights must sum to one within 1e-12. Components with weight exactly zero
    are dropped with a ``UserWarning``. Instances are immutable.
    """

    __slots__ = ("weights", "means", "sds", "name")

    def __init__(self, weights: Sequence[float], means: Sequence[float], sds: Sequence[float],
                 name: str | None = None):
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        m = np.atleast_1d(np.asarray(means, dtype=float))
        s = np.atleast_1d(np.asarray(sds, dtype=float))
        label = f"mixture {name!r}" if name else "mixture"
        if not (w.shape == m.shape == s.shape) or w.ndim != 1:
            raise ValueError(f"{label}: weights, means and sds must be 1-d and the same length")
        if w.size == 0:
            raise ValueError(f"{label}: needs at least one component")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise ValueError(f"{label}: non-finite parameter")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError(f"{label}: weights must lie in [0, 1]")
        if np.any(s <= 0):
            raise ValueError(f"{label}: sds must be strictly positive")
        total = float(w.sum())
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"{label}: weights sum to {total!r}, not 1")
        keep = w > 0
        if not keep.all():
            warnings.warn(f"{label}: dropping {int((~keep).sum())} zero-weight component(s)",
                          UserWarning, stacklevel=2)
            w, m, s = w[keep], m[keep], s[keep]
        object.__setattr__(self, "weights", _readonly(w / w.sum()))
        object.__setattr__(self, "means", _readonly(m))
        object.__setattr__(self, "sds", _readonly(s))
        object.__setattr__(self, "name", name)

    def __setattr__(self, key, value):
        raise AttributeError("MixtureNormal is immutable")

    def __reduce__(self):
        return (type(self), (np.array(self.weights), np.array(self.means), np.array(self.sds), self.name))

    # -- construction helpers ------------------------------------------------

    @classmethod
    def normal(cls, mean: float, sd: float, name: str | None = None) -> "MixtureNormal":
        return cls([1.0], [mean], [sd], name=name)

    @classmethod
    def from_components(cls, pairs: Iterable[tuple[float, NormalComponent]],
                        name: str | None = None) -> "MixtureNormal":
        pairs = list(pairs)
        return cls([p[0] for p in pairs], [p[1].mean for p in pairs], [p[1].sd for p in pairs], name=name)

    @classmethod
    def from_records(cls, records: Sequence[dict], name: str | None = None) -> "MixtureNormal":
        """Build from ``[{"weight": .., "mean": .., "sd": ..}, ...]``."""
        return cls([r["weight"] for r in records], [r["mean"] for r in records],
                   [r["sd"] for r in records], name=name)

    def to_records(self) -> list[dict]:
        return [{"weight": float(w), "mean": float(m), "sd": float(s)}
                for w, m, s in zip(self.weights, self.means, self.sds)]

    # -- basic properties ----------------------------------------------------

    @property
    def n_components(self) -> int:
        return int(self.weights.size)

    @property
    def variances(self) -> np.ndarray:
        return self.sds ** 2

    @property
    def components(self) -> list[NormalComponent]:
        return [NormalComponent(float(m), float(s)) for m, s in zip(self.means, self.sds)]

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    def var(self) -> float:
        mu = self.mean()
        return float(np.dot(self.weights, self.variances + (self.means - mu) ** 2))

    def sd(self) -> float:
        return math.sqrt(self.var())

    def __len__(self) -> int:
        return self.n_components

    def __eq__(self, other) -> bool:
        if not isinstance(other, MixtureNormal):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights) and np.array_equal(self.means, other.means)
                and np.array_equal(self.sds, other.sds))

    def __hash__(self):
        return hash((self.weights.tobytes(), self.means.tobytes(), self.sds.tobytes()))

    def __repr__(self) -> str:
        terms = " + ".join(f"{w:.4g}*N({m:.4g}, {s:.4g}^2)"
                           for w, m, s in zip(self.weights, self.means, self.sds))
        return f"MixtureNormal({terms})"

    # -- distribution functions ---------------------------------------------

    def density(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) / self.sds
        out = np.sum(self.weights * np.exp(-0.5 * z * z) / (self.sds * math.sqrt(2.0 * math.pi)), axis=-1)
        return float(out) if out.ndim == 0 else out

    def logdensity(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) / self.sds
        terms = np.log(self.weights) - np.log(self.sds) - 0.5 * (_LOG_2PI + z * z)
        out = logsumexp(terms, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.sum(self.weights * ndtr((x[..., None] - self.means) / self.sds), axis=-1)
        return float(out) if out.ndim == 0 else out

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.sum(self.weights * ndtr((self.means - x[..., None]) / self.sds), axis=-1)
        return float(out) if out.ndim == 0 else out

    def quantile(self, p: float, tol: float = 1e-12) -> float:
        """Inverse CDF by bracketing plus safeguarded Newton steps; ``tol`` bounds ``|cdf(x) - p|``."""
        p = float(p)
        if not math.isfinite(p):
            raise ValueError(f"non-finite probability {p}")
        if not 0.0 < p < 1.0:
            raise ValueError(f"probability must lie in (0, 1), got {p}")
        if self.n_components == 1:
            return float(self.means[0] + self.sds[0] * ndtri(p))
        lo = float(np.min(self.means - 10 * self.sds))
        hi = float(np.max(self.means + 10 * self.sds))
        spread = hi - lo
        while self.cdf(lo) > p:
            lo -= spread
            spread *= 2
        spread = hi - lo
        while self.cdf(hi) < p:
            hi += spread
            spread *= 2
        x = float(np.dot(self.weights, self.means + self.sds * ndtri(p)))
        x = min(max(x, lo), hi)
        eps = 4 * np.finfo(float).eps
        for _ in range(400):
            g = self.cdf(x) - p
            if abs(g) <= tol:
                return float(x)
            if g > 0:
                hi = x
            else:
                lo = x
            if hi - lo <= eps * (1.0 + abs(x)):
                break
            dens = self.density(x)
            nxt = x - g / dens if dens > 0 else 0.5 * (lo + hi)
            if not lo < nxt < hi:
                nxt = 0.5 * (lo + hi)
            x = nxt
        return float(x)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        return self.means[idx] + self.sds[idx] * rng.standard_normal(n)

    # -- calculus -------------------------------------------------------------

    def posterior(self, ybar: float, se: float) -> "MixtureNormal":
        """Conjugate update with one normal observation ``ybar ~ N(theta, se^2)``.

        Each component is updated by normal-normal conjugacy; the weights are
        re-weighted by the component marginal likelihoods in log space.
        """
        if not (math.isfinite(se) and se > 0):
            raise ValueError(f"standard error must be positive and finite, got {se}")
        if not math.isfinite(ybar):
            raise ValueError(f"non-finite observation {ybar}")
        v = self.variances
        se2 = se * se
        tot = v + se2
        lw = np.log(self.weights) - 0.5 * np.log(tot) - 0.5 * (ybar - self.means) ** 2 / tot
        w = np.exp(lw - logsumexp(lw))
        pv = 1.0 / (1.0 / v + 1.0 / se2)
        pm = pv * (self.means / v + ybar / se2)
        # underflowed weights stay as tiny positives so K is preserved
        w = np.maximum(w, np.finfo(float).tiny)
        return MixtureNormal(w / w.sum(), pm, np.sqrt(pv), name=self.name)

    def ess(self, sigma_ref: float) -> float:
        """Moment-based effective sample size ``sigma_ref^2 / Var``."""
        if not sigma_ref > 0:
            raise ValueError("sigma_ref must be positive")
        return sigma_ref ** 2 / self.var()

    def truncate_below(self, cut: float) -> "TruncatedMixture":
        """Restrict to ``(-inf, cut]`` and renormalise."""
        return TruncatedMixture(self, upper=cut)

    def truncate_above(self, cut: float) -> "TruncatedMixture":
        """Restrict to ``[cut, inf)`` and renormalise."""
        return TruncatedMixture(self, lower=cut)

    def reflect(self) -> "MixtureNormal":
        """Distribution of ``-X``."""
        return MixtureNormal(self.weights, -self.means, self.sds, name=self.name)

    def shift(self, c: float) -> "MixtureNormal":
        return MixtureNormal(self.weights, self.means + c, self.sds, name=self.name)

    def hull(self, k: float = 12.0) -> tuple[float, float]:
        return float(np.min(self.means - k * self.sds)), float(np.max(self.means + k * self.sds))


class TruncatedMixture:
    """A :class:`MixtureNormal` restricted to ``[lower, upper]`` and renormalised.

    ``mass`` holds the untruncated probability of the interval, which the
    false-positive metrics reuse as the prior probability of a null effect.
    """

    __slots__ = ("mixture", "lower", "upper", "mass", "component_mass")

    def __init__(self, mixture: MixtureNormal, lower: float = -math.inf, upper: float = math.inf):
        if not lower < upper:
            raise ValueError(f"empty truncation interval [{lower}, {upper}]")
        comp = (ndtr((upper - mixture.means) / mixture.sds)
                - ndtr((lower - mixture.means) / mixture.sds))
        # log-scale fallback for intervals deep in a single tail
        if lower == -math.inf:
            comp = np.exp(log_ndtr((upper - mixture.means) / mixture.sds))
        elif upper == math.inf:
            comp = np.exp(log_ndtr((mixture.means - lower) / mixture.sds))
        mass = float(np.dot(mixture.weights, comp))
        if not mass > 0:
            raise ValueError(f"mixture has zero mass on [{lower}, {upper}]; cannot normalise")
        object.__setattr__(self, "mixture", mixture)
        object.__setattr__(self, "lower", float(lower))
        object.__setattr__(self, "upper", float(upper))
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "component_mass", _readonly(comp))

    def __setattr__(self, key, value):
        raise AttributeError("TruncatedMixture is immutable")

    def __repr__(self) -> str:
        return f"TruncatedMixture({self.mixture!r}, lower={self.lower}, upper={self.upper})"

    @property
    def normalizer(self) -> float:
        return self.mass

    def density(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        out = np.where(inside, np.asarray(self.mixture.density(x)) / self.mass, 0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        lo = self.mixture.cdf(self.lower) if math.isfinite(self.lower) else 0.0
        out = (np.asarray(self.mixture.cdf(x)) - lo) / self.mass
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def reflect(self) -> "TruncatedMixture":
        return TruncatedMixture(self.mixture.reflect(), lower=-self.upper, upper=-self.lower)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draws, component first, computed in the log tail."""
        mix = self.mixture
        probs = mix.weights * self.component_mass
        probs = probs / probs.sum()
        idx = rng.choice(mix.n_components, size=n, p=probs)
        m = mix.means[idx]
        s = mix.sds[idx]
        a = (self.lower - m) / s
        b = (self.upper - m) / s
        return m + s * truncnorm.rvs(a, b, size=n, random_state=rng)

    def hull(self, k: float = 12.0) -> tuple[float, float]:
        lo, hi = self.mixture.hull(k)
        return max(lo, self.lower), min(hi, self.upper)


def robustify(m: MixtureNormal, w_robust: float, robust_mean: float, robust_sd: float,
              name: str | None = None) -> MixtureNormal:
    """Append a vague component: ``(1 - w_robust) * m + w_robust * N(robust_mean, robust_sd^2)``."""
    if not 0.0 < w_robust < 1.0:
        raise ValueError(f"robust weight must lie in (0, 1), got {w_robust}")
    if not robust_sd > 0:
        raise ValueError("robust sd must be positive")
    w = np.concatenate([(1.0 - w_robust) * m.weights, [w_robust]])
    return MixtureNormal(w, np.concatenate([m.means, [robust_mean]]),
                         np.concatenate([m.sds, [robust_sd]]), name=name or m.name)
