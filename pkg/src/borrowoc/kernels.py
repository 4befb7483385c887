"""Hot inner loops: mixture posterior tail probabilities and success boundaries.

Every kernel exists twice, as a numba ``@njit`` loop and as a vectorised numpy
function with the same signature. The module-level names point at one of the
two according to :mod:`borrowoc._accel`; both variants stay importable through
:data:`NUMBA_KERNELS` and :data:`NUMPY_KERNELS` so tests and the benchmark can
compare them directly.

All kernels work in the canonical orientation: success means the contrast
exceeds ``cut``. Callers reflect "less" rules before getting here.
"""

import math
from types import SimpleNamespace

import numpy as np
from scipy.special import logsumexp, ndtr

from ._accel import USE_NUMBA, njit

_SQRT2 = math.sqrt(2.0)
_LOG_2PI = math.log(2.0 * math.pi)
_CHUNK = 1 << 16


# --------------------------------------------------------------------------
# numba variants
# --------------------------------------------------------------------------


@njit
def _phi_cdf(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@njit
def _phi_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


@njit
def _posterior_weights(y, w, m, v, se2, out_w, out_mean, out_var):
    k = w.shape[0]
    top = -np.inf
    for j in range(k):
        tot = v[j] + se2
        lw = math.log(w[j]) - 0.5 * (_LOG_2PI + math.log(tot)) - 0.5 * (y - m[j]) ** 2 / tot
        out_w[j] = lw
        if lw > top:
            top = lw
        pv = 1.0 / (1.0 / v[j] + 1.0 / se2)
        out_var[j] = pv
        out_mean[j] = pv * (m[j] / v[j] + y / se2)
    s = 0.0
    for j in range(k):
        out_w[j] = math.exp(out_w[j] - top)
        s += out_w[j]
    for j in range(k):
        out_w[j] /= s


@njit
def _nb_mixture_posterior_tail(y, w, m, v, se, cut):
    n = y.shape[0]
    k = w.shape[0]
    se2 = se * se
    out = np.empty(n)
    pw = np.empty(k)
    pm = np.empty(k)
    pv = np.empty(k)
    for i in range(n):
        _posterior_weights(y[i], w, m, v, se2, pw, pm, pv)
        acc = 0.0
        for j in range(k):
            acc += pw[j] * _phi_cdf((pm[j] - cut) / math.sqrt(pv[j]))
        out[i] = acc
    return out


@njit
def _nb_control_posterior_tail(yt, yc, wt, mt, vt, wc, mc, vc, se_t, se_c, cut):
    n = yt.shape[0]
    kt = wt.shape[0]
    kc = wc.shape[0]
    out = np.empty(n)
    twt = np.empty(kt)
    tm = np.empty(kt)
    tv = np.empty(kt)
    cw = np.empty(kc)
    cm = np.empty(kc)
    cv = np.empty(kc)
    for i in range(n):
        _posterior_weights(yt[i], wt, mt, vt, se_t * se_t, twt, tm, tv)
        _posterior_weights(yc[i], wc, mc, vc, se_c * se_c, cw, cm, cv)
        acc = 0.0
        for a in range(kt):
            for b in range(kc):
                acc += twt[a] * cw[b] * _phi_cdf((tm[a] - cm[b] - cut) / math.sqrt(tv[a] + cv[b]))
        out[i] = acc
    return out


@njit
def _nb_control_critical(yc, mt, vt, wc, mc, vc, se_t, se_c, cut, conf, z_conf):
    n = yc.shape[0]
    kc = wc.shape[0]
    bt2 = 1.0 / (1.0 / vt + 1.0 / (se_t * se_t))
    out = np.empty(n)
    cw = np.empty(kc)
    cm = np.empty(kc)
    cv = np.empty(kc)
    sd = np.empty(kc)
    for i in range(n):
        _posterior_weights(yc[i], wc, mc, vc, se_c * se_c, cw, cm, cv)
        lo = np.inf
        hi = -np.inf
        u = 0.0
        for j in range(kc):
            sd[j] = math.sqrt(bt2 + cv[j])
            c = cm[j] + cut + sd[j] * z_conf
            u += cw[j] * c
            if c < lo:
                lo = c
            if c > hi:
                hi = c
        if hi - lo > 1e-14 * (1.0 + abs(hi)):
            for _ in range(200):
                g = -conf
                dg = 0.0
                for j in range(kc):
                    z = (u - cm[j] - cut) / sd[j]
                    g += cw[j] * _phi_cdf(z)
                    dg += cw[j] * _phi_pdf(z) / sd[j]
                if g > 0.0:
                    hi = u
                else:
                    lo = u
                step = g / dg if dg > 0.0 else 0.0
                nxt = u - step
                if not (lo < nxt < hi) or dg <= 0.0:
                    nxt = 0.5 * (lo + hi)
                if abs(nxt - u) <= 1e-15 * (1.0 + abs(u)) or hi - lo <= 1e-15 * (1.0 + abs(u)):
                    u = nxt
                    break
                u = nxt
        else:
            u = 0.5 * (lo + hi)
        out[i] = (u / bt2 - mt / vt) * se_t * se_t
    return out


# --------------------------------------------------------------------------
# numpy variants
# --------------------------------------------------------------------------


def _np_posterior(y, w, m, v, se2):
    y = y[:, None]
    tot = v + se2
    lw = np.log(w) - 0.5 * (_LOG_2PI + np.log(tot)) - 0.5 * (y - m) ** 2 / tot
    lw = lw - logsumexp(lw, axis=1, keepdims=True)
    pv = 1.0 / (1.0 / v + 1.0 / se2)
    pm = pv * (m / v + y / se2)
    return np.exp(lw), pm, pv


def _np_mixture_posterior_tail(y, w, m, v, se, cut):
    out = np.empty(y.shape[0])
    for s in range(0, y.shape[0], _CHUNK):
        pw, pm, pv = _np_posterior(y[s : s + _CHUNK], w, m, v, se * se)
        out[s : s + _CHUNK] = np.sum(pw * ndtr((pm - cut) / np.sqrt(pv)), axis=1)
    return out


def _np_control_posterior_tail(yt, yc, wt, mt, vt, wc, mc, vc, se_t, se_c, cut):
    out = np.empty(yt.shape[0])
    for s in range(0, yt.shape[0], _CHUNK):
        tw, tm, tv = _np_posterior(yt[s : s + _CHUNK], wt, mt, vt, se_t * se_t)
        cw, cm, cv = _np_posterior(yc[s : s + _CHUNK], wc, mc, vc, se_c * se_c)
        z = (tm[:, :, None] - cm[:, None, :] - cut) / np.sqrt(tv[None, :, None] + cv[None, None, :])
        out[s : s + _CHUNK] = np.einsum("na,nb,nab->n", tw, cw, ndtr(z))
    return out


def _np_control_critical(yc, mt, vt, wc, mc, vc, se_t, se_c, cut, conf, z_conf):
    bt2 = 1.0 / (1.0 / vt + 1.0 / (se_t * se_t))
    cw, cm, cv = _np_posterior(yc, wc, mc, vc, se_c * se_c)
    sd = np.sqrt(bt2 + cv)[None, :]
    c = cm + cut + sd * z_conf
    lo = c.min(axis=1)
    hi = c.max(axis=1)
    u = np.sum(cw * c, axis=1)
    active = hi - lo > 1e-14 * (1.0 + np.abs(hi))
    for _ in range(200):
        if not active.any():
            break
        z = (u[:, None] - cm - cut) / sd
        g = np.sum(cw * ndtr(z), axis=1) - conf
        dg = np.sum(cw * np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * sd), axis=1)
        hi = np.where(active & (g > 0.0), u, hi)
        lo = np.where(active & (g <= 0.0), u, lo)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            nxt = u - g / dg
        bad = ~((lo < nxt) & (nxt < hi)) | ~(dg > 0.0)
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        done = (np.abs(nxt - u) <= 1e-15 * (1.0 + np.abs(u))) | (hi - lo <= 1e-15 * (1.0 + np.abs(u)))
        u = np.where(active, nxt, u)
        active &= ~done
    return (u / bt2 - mt / vt) * se_t * se_t


NUMBA_KERNELS = SimpleNamespace(
    mixture_posterior_tail=_nb_mixture_posterior_tail,
    control_posterior_tail=_nb_control_posterior_tail,
    control_critical=_nb_control_critical,
)
NUMPY_KERNELS = SimpleNamespace(
    mixture_posterior_tail=_np_mixture_posterior_tail,
    control_posterior_tail=_np_control_posterior_tail,
    control_critical=_np_control_critical,
)

_ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def mixture_posterior_tail(y, weights, means, variances, se, cut):
    """Pr(contrast > cut | ybar) for each ybar under a normal-mixture prior."""
    y = np.atleast_1d(_f64(y))
    return _ACTIVE.mixture_posterior_tail(
        y, _f64(weights), _f64(means), _f64(variances), float(se), float(cut)
    )


def control_posterior_tail(yt, yc, prior_t, prior_c, se_t, se_c, cut):
    """Pr(theta_t - theta_c > cut | ybar_t, ybar_c) with independent arm priors.

    ``prior_t`` and ``prior_c`` are ``(weights, means, variances)`` triples.
    """
    yt = np.atleast_1d(_f64(yt))
    yc = np.atleast_1d(_f64(yc))
    yt, yc = np.broadcast_arrays(yt, yc)
    wt, mt, vt = (_f64(a) for a in prior_t)
    wc, mc, vc = (_f64(a) for a in prior_c)
    return _ACTIVE.control_posterior_tail(
        _f64(yt), _f64(yc), wt, mt, vt, wc, mc, vc, float(se_t), float(se_c), float(cut)
    )


def control_critical(yc, mean_t, var_t, prior_c, se_t, se_c, cut, conf, z_conf):
    """Treatment-arm boundary ybar_t*(ybar_c) for a single-component treatment prior."""
    yc = np.atleast_1d(_f64(yc))
    wc, mc, vc = (_f64(a) for a in prior_c)
    return _ACTIVE.control_critical(
        yc, float(mean_t), float(var_t), wc, mc, vc,
        float(se_t), float(se_c), float(cut), float(conf), float(z_conf),
    )
