"""Meta-analytic-predictive priors from historical study summaries.

The between-study sd is integrated out on a Gauss-Legendre grid, so the
predictive distribution is itself a finite normal mixture (one component per
grid node). :func:`fit_mixture` compresses it to a few components by EM on a
fine grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .mixture import MixtureNormal, NormalComponent, robustify

__all__ = [
    "HistoricalStudy", "HierarchyConfig", "MAPPredictive", "GriddedDensity", "MixtureFit",
    "EMConvergenceError", "map_predictive", "fit_mixture", "robustify",
]


@dataclass(frozen=True)
class HistoricalStudy:
    label: str
    estimate: float
    se: float

    def __post_init__(self):
        if not math.isfinite(self.estimate):
            raise ValueError(f"study {self.label!r}: non-finite estimate")
        if not (math.isfinite(self.se) and self.se > 0):
            raise ValueError(f"study {self.label!r}: se must be positive, got {self.se}")


@dataclass(frozen=True)
class HierarchyConfig:
    """Priors for the normal-normal hierarchical model.

    ``mu_prior=None`` means a flat prior on the population mean.
    ``tau_fixed`` pins the between-study sd to a single value instead of
    integrating it against the half-normal prior.
    """

    tau_prior_scale: float
    tau_grid_size: int = 64
    mu_prior: NormalComponent | None = None
    tau_fixed: float | None = None

    def __post_init__(self):
        if self.tau_fixed is None and not self.tau_prior_scale > 0:
            raise ValueError("tau_prior_scale must be positive")
        if self.tau_fixed is not None and self.tau_fixed < 0:
            raise ValueError("tau_fixed must be non-negative")
        if self.tau_grid_size < 16:
            raise ValueError("tau_grid_size must be at least 16")

    @classmethod
    def from_reference_sd(cls, sigma_ref: float, **kw) -> "HierarchyConfig":
        """Half-normal scale set to ``sigma_ref / 2``."""
        return cls(tau_prior_scale=sigma_ref / 2.0, **kw)


@dataclass(frozen=True)
class GriddedDensity:
    x: np.ndarray
    density: np.ndarray

    @property
    def mass(self) -> np.ndarray:
        """Trapezoid masses per node."""
        dx = np.diff(self.x)
        m = np.zeros_like(self.x)
        m[:-1] += 0.5 * dx
        m[1:] += 0.5 * dx
        return m * self.density

    def total(self) -> float:
        return float(np.trapezoid(self.density, self.x))

    def normalized(self) -> "GriddedDensity":
        return GriddedDensity(self.x, self.density / self.total())

    @classmethod
    def from_mixture(cls, mix: MixtureNormal, n: int | None = None, tail: float = 1e-12) -> "GriddedDensity":
        """Uniform grid between the ``tail`` and ``1 - tail`` quantiles, widened by one narrowest sd."""
        pad = float(mix.sds.min())
        lo = mix.quantile(tail) - pad
        hi = mix.quantile(1.0 - tail) + pad
        if n is None:
            n = int(min(20001, max(2001, math.ceil((hi - lo) / (float(mix.sds.min()) / 8.0)) + 1)))
        x = np.linspace(lo, hi, n)
        return cls(x, np.asarray(mix.density(x)))


@dataclass(frozen=True)
class MAPPredictive:
    """Predictive density of a new study's parameter.

    ``tau_nodes``/``tau_weights`` are the quadrature nodes and posterior
    weights for the between-study sd; component ``j`` of the predictive is
    ``N(mu_hat_j, V_j + tau_j^2)``.
    """

    tau_nodes: np.ndarray
    tau_weights: np.ndarray
    mu_hat: np.ndarray
    mu_var: np.ndarray

    @property
    def means(self) -> np.ndarray:
        return self.mu_hat

    @property
    def sds(self) -> np.ndarray:
        return np.sqrt(self.mu_var + self.tau_nodes ** 2)

    def as_mixture(self) -> MixtureNormal:
        keep = self.tau_weights > 1e-300
        w = self.tau_weights[keep]
        return MixtureNormal(w / w.sum(), self.means[keep], self.sds[keep])

    def density(self, x):
        return self.as_mixture().density(x)

    def mean(self) -> float:
        return float(np.dot(self.tau_weights, self.mu_hat))

    def var(self) -> float:
        return self.as_mixture().var()

    def grid(self, n: int | None = None) -> GriddedDensity:
        """Density on a uniform grid spaced at most one eighth of the narrowest sd."""
        return GriddedDensity.from_mixture(self.as_mixture(), n=n)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.as_mixture().sample(n, rng)


def _conditional_mu(y, s2, tau, mu_prior):
    w = 1.0 / (s2 + tau * tau)
    prec = w.sum()
    num = np.dot(w, y)
    if mu_prior is not None:
        prec += 1.0 / mu_prior.sd ** 2
        num += mu_prior.mean / mu_prior.sd ** 2
    mu_hat = num / prec
    var = 1.0 / prec
    # log marginal likelihood of y given tau, mu integrated out (constants dropped)
    loglik = 0.5 * math.log(var) + 0.5 * np.sum(np.log(w)) - 0.5 * np.dot(w, (y - mu_hat) ** 2)
    if mu_prior is not None:
        loglik += -math.log(mu_prior.sd) - 0.5 * (mu_hat - mu_prior.mean) ** 2 / mu_prior.sd ** 2
    return mu_hat, var, loglik


def map_predictive(data: list[HistoricalStudy], cfg: HierarchyConfig) -> MAPPredictive:
    """Predictive distribution of the parameter in a new exchangeable study."""
    if len(data) == 0:
        raise ValueError("map_predictive needs at least one historical study")
    # sort so the result does not depend on input order
    data = sorted(data, key=lambda st: (st.estimate, st.se, st.label))
    y = np.array([st.estimate for st in data])
    s2 = np.array([st.se for st in data]) ** 2

    if cfg.tau_fixed is not None:
        taus = np.array([float(cfg.tau_fixed)])
        logw = np.zeros(1)
    else:
        # tau = tau_max * u^2 concentrates nodes near zero, where the half-normal peaks
        u, gw = np.polynomial.legendre.leggauss(cfg.tau_grid_size)
        u = 0.5 * (u + 1.0)
        gw = 0.5 * gw
        tau_max = 10.0 * cfg.tau_prior_scale
        taus = tau_max * u * u
        jac = 2.0 * tau_max * u
        logprior = -0.5 * (taus / cfg.tau_prior_scale) ** 2
        logw = np.log(gw) + np.log(jac) + logprior

    mu_hat = np.empty_like(taus)
    mu_var = np.empty_like(taus)
    for j, t in enumerate(taus):
        mu_hat[j], mu_var[j], ll = _conditional_mu(y, s2, t, cfg.mu_prior)
        logw[j] += ll
    w = np.exp(logw - logsumexp(logw))
    return MAPPredictive(tau_nodes=taus, tau_weights=w, mu_hat=mu_hat, mu_var=mu_var)


class EMConvergenceError(RuntimeError):
    def __init__(self, msg: str, best: "MixtureFit"):
        super().__init__(msg)
        self.best = best


@dataclass(frozen=True)
class MixtureFit:
    mixture: MixtureNormal
    kl: float
    n_iter: int
    kl_trace: list[float] = field(repr=False)


def _e_step(x, w, m, s):
    """Log mixture density and responsibilities on the grid."""
    logp = np.log(w) - np.log(s) - 0.5 * math.log(2 * math.pi) - 0.5 * ((x[:, None] - m) / s) ** 2
    mx = logp.max(axis=1)
    e = np.exp(logp - mx[:, None])
    tot = e.sum(axis=1)
    return mx + np.log(tot), e / tot[:, None]


def _em(x, mass, logf, K, max_iter, tol, floor):
    mu0 = float(np.dot(mass, x))
    sd0 = math.sqrt(float(np.dot(mass, (x - mu0) ** 2)))
    qs = (np.arange(K) + 0.5) / K
    m = np.interp(qs, np.cumsum(mass), x)
    s = np.full(K, sd0)
    w = np.full(K, 1.0 / K)

    ok = mass > 0
    logg, r = _e_step(x, w, m, s)
    kl = float(np.sum(mass[ok] * (logf[ok] - logg[ok])))
    trace = [kl]
    best = (kl, w.copy(), m.copy(), s.copy())
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        nk = np.maximum(mass @ r, 1e-300)
        w = nk / nk.sum()
        m = (mass * x) @ r / nk
        var = (mass[:, None] * r * (x[:, None] - m) ** 2).sum(axis=0) / nk
        s = np.sqrt(np.maximum(var, floor ** 2))
        logg, r = _e_step(x, w, m, s)
        new_kl = float(np.sum(mass[ok] * (logf[ok] - logg[ok])))
        trace.append(new_kl)
        if new_kl < best[0]:
            best = (new_kl, w.copy(), m.copy(), s.copy())
        if abs(kl - new_kl) <= tol * max(1.0, abs(kl)):
            converged = True
            break
        kl = new_kl
    kl, w, m, s = best
    order = np.argsort(m, kind="stable")
    return MixtureFit(MixtureNormal(w[order], m[order], s[order]), kl, it, trace), converged


def _split_heaviest(fit: MixtureFit) -> MixtureFit:
    mix = fit.mixture
    j = int(np.argmax(mix.weights))
    w = np.insert(mix.weights, j, 0.0)
    w[j] = w[j + 1] = 0.5 * mix.weights[j]
    mixture = MixtureNormal(w, np.insert(mix.means, j, mix.means[j]), np.insert(mix.sds, j, mix.sds[j]))
    return MixtureFit(mixture, fit.kl, fit.n_iter, fit.kl_trace)


def fit_mixture(density: GriddedDensity, K: int, *, max_iter: int = 20000, tol: float = 1e-10,
                min_sd: float | None = None) -> MixtureFit:
    """K-component normal mixture minimising KL(density || mixture) by grid-weighted EM.

    Fits are nested: the K-component EM result is compared with the
    (K-1)-component fit whose heaviest component is split in two identical
    halves, and the better one is returned. KL is therefore non-increasing in
    K, and an over-parameterised fit of an exact mixture is exact.
    """
    if not 1 <= K <= 6:
        raise ValueError("K must be between 1 and 6")
    x = np.asarray(density.x, dtype=float)
    dens = density.normalized()
    mass = dens.mass
    mass = mass / mass.sum()
    with np.errstate(divide="ignore"):
        logf = np.log(dens.density)
    floor = min_sd if min_sd is not None else 1e-3 * float(np.min(np.diff(x)))

    chosen, ok = None, True
    for k in range(1, K + 1):
        fit, conv = _em(x, mass, logf, k, max_iter, tol, floor)
        if chosen is not None:
            padded = _split_heaviest(chosen)
            if padded.kl <= fit.kl:
                fit, conv = padded, ok
        chosen, ok = fit, conv
    if not ok:
        raise EMConvergenceError(f"EM did not converge in {max_iter} iterations (KL={chosen.kl:.3g})", chosen)
    return chosen
