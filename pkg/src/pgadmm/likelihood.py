"""Poisson-Gaussian negative log-likelihood with truncated series.

The per-pixel likelihood of a measurement ``m'`` given the blurred intensity
``m`` is::

    p(m' | m) = exp(-m) / sqrt(2 pi sigma^2) * s(m, m')
    s(a, b)   = sum_{n >= 0} a^n / n! * exp(-(b - alpha n)^2 / (2 sigma^2))

``s`` is evaluated on a window of ``2 delta sigma / alpha`` terms around
its dominant term ``n*`` plus the ``n = 0`` term, always in log-space.
All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, log_ndtr

__all__ = [
    "NoiseModel",
    "Bounds",
    "LikelihoodKernelOut",
    "find_nstar",
    "log_s_delta",
    "s_delta",
    "grad1_delta",
    "grad2_delta",
    "gradients_delta",
    "zeta_delta",
    "eta_delta",
    "project_subgradient",
    "conditional_mean_q",
    "log_error_bound",
    "error_bound",
    "vector_error_bound",
    "pixel_nll",
    "neg_log_likelihood",
    "REFERENCE_DELTA",
]

# truncation width used for cost tracking and as the "exact" reference
REFERENCE_DELTA = 40.0

# log-terms evaluated per block
_CHUNK = 1 << 20


@dataclass(frozen=True)
class NoiseModel:
    """Gain ``alpha``, Gaussian std ``sigma`` and pre-Poisson scale ``alpha_prime``."""

    alpha: float = 1.0
    sigma: float = 1.0
    c: float = 0.0
    alpha_prime: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "sigma", "alpha_prime"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive, got {val}")
        if self.c != 0:
            raise ValueError("only a zero-mean Gaussian component is supported")


@dataclass(frozen=True)
class Bounds:
    """Box ``[l, u]`` on the blurred image and cap ``u_prime`` on the image."""

    l: float
    u: float
    u_prime: float

    def __post_init__(self):
        if not 0 <= self.l <= self.u:
            raise ValueError(f"need 0 <= l <= u, got l={self.l}, u={self.u}")
        if not self.u_prime > 0:
            raise ValueError(f"u_prime must be positive, got {self.u_prime}")


@dataclass(frozen=True)
class LikelihoodKernelOut:
    s_val: float
    n_star: int
    trunc_lo: int
    trunc_hi: int


def _log_term(n, log_a, b, model):
    # n >= 1 only: 0 * log(0) is undefined
    return n * log_a - (b - model.alpha * n) ** 2 / (2.0 * model.sigma**2) - gammaln(n + 1.0)


def _log_term0(b, model):
    return -(b**2) / (2.0 * model.sigma**2)


def find_nstar(a, b, model: NoiseModel) -> np.ndarray:
    """Index of the largest series term of ``s(a, b)``.

    Consecutive terms satisfy ``t(n+1) >= t(n)`` iff
    ``log(n+1) + alpha^2 n / sigma^2 <= R`` with
    ``R = log a + alpha (2b - alpha) / (2 sigma^2)``. The left side is
    increasing and concave, so Newton converges to its root ``x`` and
    ``n* = ceil(x)``; a final integer check guards against rounding.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    shape = a.shape
    a, b = a.ravel(), b.ravel()
    alpha, s2 = model.alpha, model.sigma**2
    pos = a > 0
    with np.errstate(divide="ignore"):
        la = np.where(pos, np.log(np.where(pos, a, 1.0)), 0.0)
    k = alpha**2 / s2
    r = la + alpha * (2.0 * b - alpha) / (2.0 * s2)
    act = pos & (r > 0)
    # both are upper bounds on the root; the first tangent step lands below
    # it and the iteration then increases monotonically
    x = np.where(act, np.minimum(r / k, np.expm1(np.minimum(r, 700.0))), 0.0)
    for _ in range(100):
        step = np.where(act, -(np.log1p(x) + k * x - r) / (1.0 / (1.0 + x) + k), 0.0)
        x = np.maximum(x + step, 0.0)
        if not np.any(np.abs(step) > 1e-12 * (1.0 + x)):
            break
    n = np.where(act, np.ceil(x), 0.0)

    def diff(nn):
        # log t(n+1) - log t(n)
        return la + alpha * (2.0 * b - 2.0 * alpha * nn - alpha) / (2.0 * s2) - np.log1p(nn)

    n = np.where(pos & (diff(n) > 0), n + 1.0, n)
    n = np.where(pos & (n >= 1) & (diff(np.maximum(n - 1.0, 0.0)) < 0), n - 1.0, n)
    return n.astype(np.int64).reshape(shape)


def _bracket(x):
    # greatest integer strictly less than x
    return np.ceil(x) - 1.0


def _window(nstar, delta, model):
    half = delta * model.sigma / model.alpha
    lo = np.maximum(1.0, _bracket(nstar - half))
    hi = _bracket(nstar + half)
    return lo, hi


def _series(a, bs, delta, model, moments=False):
    """Truncated log-series ``log s_delta(a, b)`` for several ``b`` arrays at once.

    Each ``b`` keeps its own window; the ``n log a - log n!`` part is shared.
    Returns one ``(log_s, nstar, lo, hi, mean)`` tuple per ``b`` (``mean`` is
    ``None`` unless requested).
    """
    a = np.asarray(a, dtype=np.float64)
    bs = [np.asarray(b, dtype=np.float64) for b in bs]
    shape = np.broadcast_shapes(a.shape, *(b.shape for b in bs))
    if np.any(a < 0):
        raise ValueError("series argument a must be nonnegative")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    a = np.broadcast_to(a, shape).ravel()
    B = np.stack([np.broadcast_to(b, shape).ravel() for b in bs])
    nstar = find_nstar(a[None, :], B, model).astype(np.float64)
    lo, hi = _window(nstar, delta, model)
    lo_all, hi_all = lo.min(axis=0), hi.max(axis=0)
    width = int(np.max(hi_all - lo_all, initial=-1)) + 1
    offsets = np.arange(max(width, 0), dtype=np.float64)
    pos = a > 0
    with np.errstate(divide="ignore"):
        log_a = np.log(np.where(pos, a, 1.0))
    s2 = 2.0 * model.sigma**2
    t0 = _log_term0(B, model)
    log_s = np.empty(B.shape)
    mean = np.empty(B.shape) if moments else None
    if width <= 0:
        log_s[:] = t0
        if moments:
            mean[:] = 0.0
    chunk = max(1, _CHUNK // max(width, 1))
    for start in range(0, a.size if width > 0 else 0, chunk):
        sl = slice(start, start + chunk)
        n = lo_all[sl, None] + offsets[None, :]
        base = np.where(pos[sl, None], n * log_a[sl, None] - gammaln(n + 1.0), -np.inf)
        valid = (n >= lo[:, sl, None]) & (n <= hi[:, sl, None])
        t = np.where(valid, base - (B[:, sl, None] - model.alpha * n) ** 2 / s2, -np.inf)
        top = np.maximum(t0[:, sl], t.max(axis=2))
        w = np.exp(t - top[:, :, None])
        total = np.exp(t0[:, sl] - top) + w.sum(axis=2)
        if moments:
            mean[:, sl] = (w * n).sum(axis=2) / total
        log_s[:, sl] = top + np.log(total)
    # report the window as contiguous when the n = 0 term abuts it
    lo_rep = np.minimum(np.where(lo <= 1.0, 0.0, lo), nstar)
    hi_rep = np.maximum(hi, nstar)
    return [(log_s[j].reshape(shape), nstar[j].reshape(shape), lo_rep[j].reshape(shape), hi_rep[j].reshape(shape),
             mean[j].reshape(shape) if moments else None) for j in range(len(bs))]


def _window_sums(a, b, delta, model, moments=False):
    """Log of the truncated series, window, and optionally the posterior mean."""
    res = list(_series(a, [b], delta, model, moments)[0])
    return res if moments else res[:4]


def log_s_delta(a, b, delta, model: NoiseModel):
    """Return ``(log s_delta, n_star, trunc_lo, trunc_hi)`` arrays."""
    return tuple(_window_sums(a, b, delta, model))


def s_delta(a: float, b: float, delta: float, model: NoiseModel) -> LikelihoodKernelOut:
    """Scalar truncated series value together with its summation window."""
    if a < 0:
        raise ValueError("series argument a must be nonnegative")
    log_s, nstar, lo, hi = _window_sums(a, b, delta, model)
    return LikelihoodKernelOut(float(np.exp(log_s)), int(nstar), int(lo), int(hi))


def _scalarize(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def gradients_delta(m, m_prime, delta, model: NoiseModel, second=True):
    """First (and second) derivative approximations of ``F_M`` at ``m``.

    ``gamma1 = 1 - s(m, m' - alpha) / s(m, m')`` and
    ``gamma2 = (s(m, m' - alpha)^2 - s(m, m') s(m, m' - 2 alpha)) / s(m, m')^2``.
    """
    mp = np.asarray(m_prime, dtype=np.float64)
    shifts = [mp, mp - model.alpha] + ([mp - 2.0 * model.alpha] if second else [])
    res = _series(m, shifts, delta, model)
    ls0, ls1 = res[0][0], res[1][0]
    # near m = 0 with small sigma the exact ratios exceed the float range;
    # they saturate to -inf / +inf rather than turning into NaN
    with np.errstate(over="ignore", divide="ignore"):
        g1 = -np.expm1(ls1 - ls0)
        if not second:
            return g1, None
        ls2 = res[2][0]
        g2 = np.exp(2.0 * (ls1 - ls0) + np.log(-np.expm1(np.minimum(ls0 + ls2 - 2.0 * ls1, 0.0))))
    return g1, g2


def grad1_delta(m, m_prime, delta, model: NoiseModel):
    return _scalarize(gradients_delta(m, m_prime, delta, model, second=False)[0])


def grad2_delta(m, m_prime, delta, model: NoiseModel):
    return _scalarize(gradients_delta(m, m_prime, delta, model)[1])


def zeta_delta(m, m_prime, m_bar, beta, delta, model: NoiseModel):
    """Approximate subgradient ``gamma1 + beta (m - m_bar)`` of the prox cost."""
    g1 = gradients_delta(m, m_prime, delta, model, second=False)[0]
    return _scalarize(g1 + beta * (np.asarray(m) - m_bar))


def project_subgradient(x, m, bounds: Bounds):
    """Zero the components of ``x`` that point out of the box at active bounds."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    out = np.where(m <= bounds.l, np.minimum(x, 0.0), x)
    out = np.where(m >= bounds.u, np.maximum(out, 0.0), out)
    return out


def eta_delta(m, m_prime, m_bar, beta, delta, model: NoiseModel, bounds: Bounds):
    """Projected subgradient, zero at the minimizer of the prox cost."""
    z = zeta_delta(m, m_prime, m_bar, beta, delta, model)
    return _scalarize(project_subgradient(z, m, bounds))


def conditional_mean_q(m_l, m_prime, model: NoiseModel, delta):
    """Posterior mean of the photon count given ``m'`` and intensity ``m_l``.

    Normalized over the same window used by the series for ``s(m_l, m')``.
    """
    mean = _window_sums(m_l, m_prime, delta, model, moments=True)[4]
    return _scalarize(mean)


def log_error_bound(m_prime, delta, bounds: Bounds, model: NoiseModel):
    """Log of the per-pixel bound on ``|gamma1 - gamma1_delta|``.

    ``B = 2 sqrt(2 pi) sigma e^{2u} exp(max(m'^2, (m'-a)^2, (m'-2a)^2) / sigma^2)``
    times ``1 - erf(delta / sqrt 2)``.
    """
    mp = np.asarray(m_prime, dtype=np.float64)
    a, s = model.alpha, model.sigma
    worst = np.maximum(np.maximum(mp**2, (mp - a) ** 2), (mp - 2 * a) ** 2)
    log_b = np.log(2.0 * np.sqrt(2.0 * np.pi) * s) + 2.0 * bounds.u + worst / s**2
    # 1 - erf(d / sqrt 2) = 2 Phi(-d)
    log_tail = np.log(2.0) + log_ndtr(-np.asarray(delta, dtype=np.float64))
    return log_b + log_tail


def error_bound(m_prime, delta, bounds: Bounds, model: NoiseModel):
    """Certified bound on the derivative truncation error; ``inf`` on overflow."""
    with np.errstate(over="ignore"):
        return _scalarize(np.exp(log_error_bound(m_prime, delta, bounds, model)))


def vector_error_bound(m_prime, delta, bounds: Bounds, model: NoiseModel) -> float:
    """``sqrt(N) * max_i B_i * (1 - erf(delta / sqrt 2))`` over an image."""
    mp = np.asarray(m_prime, dtype=np.float64)
    lb = float(np.max(log_error_bound(mp, delta, bounds, model))) + 0.5 * np.log(mp.size)
    with np.errstate(over="ignore"):
        return float(np.exp(lb))


def pixel_nll(m, m_prime, delta, model: NoiseModel):
    """``-ln p(m' | m)`` per pixel, constant included."""
    log_s = _window_sums(m, m_prime, delta, model)[0]
    return np.asarray(m) - log_s + 0.5 * np.log(2.0 * np.pi * model.sigma**2)


def neg_log_likelihood(m, m_prime, delta, model: NoiseModel, bounds: Bounds) -> float:
    """Extended negative log-likelihood: ``inf`` if any pixel leaves ``[l, u]``."""
    m = np.asarray(m, dtype=np.float64)
    m_prime = np.asarray(m_prime, dtype=np.float64)
    if m.shape != m_prime.shape:
        raise ValueError(f"shape mismatch {m.shape} vs {m_prime.shape}")
    if np.any(m < bounds.l) or np.any(m > bounds.u):
        return float("inf")
    return float(np.sum(pixel_nll(m, m_prime, delta, model)))
