"""Iterative solvers for the data-fitting proximal subproblem.

Both solvers minimize, pixel by pixel,

    L(m) = F_M(m, m') + beta/2 * ||m - m_bar||^2      over m in [l, u]

and stop at the first iterate whose approximate projected subgradient
certifies one of two inexactness conditions (see :func:`check_termination`).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .likelihood import (
    REFERENCE_DELTA,
    Bounds,
    NoiseModel,
    conditional_mean_q,
    gradients_delta,
    log_error_bound,
    project_subgradient,
    vector_error_bound,
)

__all__ = [
    "Condition",
    "NewtonSchedule",
    "TerminationInputs",
    "InnerCertificate",
    "InnerState",
    "check_termination",
    "update_dual_accumulator",
    "newton_inner",
    "mm_inner",
    "mm_update",
    "min_certified_delta",
    "MM_FLOOR",
]

log = logging.getLogger(__name__)

MM_FLOOR = 1e-8
# MM iterates this close to l are certified (and returned) at l itself
MM_SNAP = 1e-6


class Condition(str, enum.Enum):
    COND1 = "cond1"
    COND2 = "cond2"
    MAXITER = "maxiter"


@dataclass(frozen=True)
class NewtonSchedule:
    """Step, scaling-clamp and truncation-width schedules of the inner loop.

    ``error_share`` sets a per-solve floor on the truncation width: the
    smallest integer width whose certified gradient error is at most
    ``error_share * theta_k``. Set it to 0 to use the plain
    ``floor(C_delta * l + 1)`` growth. Growth stops at ``delta_cap``, past
    which the error bound is far below double precision.
    """

    C: float = 1.0
    C2: float = 1.0
    C_delta: float = 0.25
    max_inner: int = 500
    error_share: float = 0.5
    delta_cap: float = REFERENCE_DELTA

    def __post_init__(self):
        if not (self.C > 0 and self.C2 > 0 and self.C_delta > 0):
            raise ValueError("schedule constants must be positive")
        if self.max_inner < 1:
            raise ValueError("max_inner must be a positive integer")
        if not self.delta_cap >= 1:
            raise ValueError("delta_cap must be at least 1")
        if not 0 <= self.error_share < 1:
            raise ValueError("error_share must lie in [0, 1)")

    def step(self, l: int) -> float:
        return self.C / (l + 1)

    def clamp(self, l: int) -> float:
        return 1.0 + self.C2 / (l + 1) ** 2

    def delta(self, l: int) -> float:
        return float(min(math.floor(self.C_delta * l + 1), self.delta_cap))


@dataclass
class TerminationInputs:
    """Outer-iteration quantities the inner termination test depends on."""

    theta: float
    rho: float
    c_k: float
    Hg: np.ndarray
    m_prime: np.ndarray
    bounds: Bounds
    model: NoiseModel
    delta_floor: float = 1.0

    def approx_err(self, delta: float) -> float:
        return vector_error_bound(self.m_prime, delta, self.bounds, self.model)


@dataclass
class InnerState:
    """Accumulators carried across outer iterations.

    ``w`` collects ``-beta * eta`` from a high-accuracy gradient, ``w_delta``
    the same from the truncated gradient actually certified, and
    ``err_accum`` the running bound ``2 beta sum_i ||e_i||``.
    """

    w: np.ndarray
    w_delta: np.ndarray
    err_accum: float = 0.0
    deltas: tuple = ()

    @classmethod
    def zeros(cls, shape) -> "InnerState":
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class InnerCertificate:
    eta_norm: float
    approx_err: float
    cond1_lhs: float
    cond2_lhs: float
    condition_met: Condition
    iterations: int
    delta_used: float
    theta: float
    rho: float
    cross_term: float = 0.0
    wm_norm: float = 0.0
    err_accum: float = 0.0
    denom: float = 0.0
    grad_evals: int = 0
    eta: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def certified(self) -> bool:
        return self.condition_met is not Condition.MAXITER

    def as_dict(self) -> dict:
        return {
            "eta_norm": self.eta_norm,
            "approx_err": self.approx_err,
            "cond1_lhs": self.cond1_lhs,
            "cond2_lhs": self.cond2_lhs,
            "condition_met": self.condition_met.value,
            "iterations": self.iterations,
            "delta_used": self.delta_used,
            "theta": self.theta,
            "rho": self.rho,
            "cross_term": self.cross_term,
            "wm_norm": self.wm_norm,
            "err_accum": self.err_accum,
            "denom": self.denom,
        }


def cond2_value(cross_term, eta_norm, approx_err, wm_norm, err_accum, denom) -> float:
    """Left side of the inexact relative-error condition."""
    ee = eta_norm + approx_err
    a = 2.0 * cross_term + ee**2 + 2.0 * wm_norm * approx_err + err_accum * ee
    if a == 0.0:
        return 0.0
    if denom <= 0.0:
        return math.inf
    return a / denom


def check_termination(iterate, eta_delta_vec, state: InnerState, term: TerminationInputs, delta: float,
                      iterations: int = 0, approx_err: float | None = None) -> InnerCertificate:
    """Evaluate both certified stopping conditions at ``iterate``.

    Condition 1: ``||eta_delta|| + e < theta``. Condition 2:
    ``a / (c_k + ||Hg - m||^2) < rho`` with
    ``a = 2 |<w_delta - m, eta_delta>| + (||eta_delta|| + e)^2 + Z`` and
    ``Z = 2 ||w_delta - m|| e + err_accum (||eta_delta|| + e)``, where ``e`` is
    the certified bound on the gradient truncation error.
    """
    m = np.asarray(iterate, dtype=np.float64)
    eta = np.asarray(eta_delta_vec, dtype=np.float64)
    e = term.approx_err(delta) if approx_err is None else approx_err
    eta_norm = float(np.linalg.norm(eta))
    cond1 = eta_norm + e
    diff = state.w_delta - m
    cross = abs(float(np.vdot(diff, eta)))
    wm = float(np.linalg.norm(diff))
    denom = term.c_k + float(np.sum((term.Hg - m) ** 2))
    cond2 = cond2_value(cross, eta_norm, e, wm, state.err_accum, denom)
    if cond1 < term.theta:
        met = Condition.COND1
    elif cond2 < term.rho:
        met = Condition.COND2
    else:
        met = Condition.MAXITER
    return InnerCertificate(eta_norm, e, cond1, cond2, met, iterations, float(delta), term.theta, term.rho,
                            cross, wm, state.err_accum, denom, eta=eta)


def update_dual_accumulator(state: InnerState, eta_accepted, eta_delta_accepted, beta: float,
                            delta_used: float, approx_err: float) -> InnerState:
    """Advance ``w``, ``w_delta`` and the error accumulator by one outer step."""
    return replace(
        state,
        w=state.w - beta * np.asarray(eta_accepted),
        w_delta=state.w_delta - beta * np.asarray(eta_delta_accepted),
        err_accum=state.err_accum + 2.0 * beta * approx_err,
        deltas=state.deltas + (float(delta_used),),
    )


def min_certified_delta(m_prime, target: float, bounds: Bounds, model: NoiseModel, cap: int = 400) -> float:
    """Smallest integer width whose vector error bound is ``<= target``."""
    if not target > 0:
        return 1.0
    mp = np.asarray(m_prime, dtype=np.float64)
    worst = mp.ravel()[np.argmax(log_error_bound(mp, 1.0, bounds, model))]
    deltas = np.arange(1.0, cap + 1.0)
    lb = log_error_bound(worst, deltas, bounds, model) + 0.5 * math.log(mp.size)
    ok = np.flatnonzero(lb <= math.log(target))
    return float(deltas[ok[0]]) if ok.size else float(cap)


def _delta(sched: NewtonSchedule, term: TerminationInputs, l: int) -> float:
    return max(sched.delta(l), term.delta_floor)


def newton_inner(m0, m_prime, m_bar, beta, bounds: Bounds, model: NoiseModel, sched: NewtonSchedule,
                 term: TerminationInputs, state: InnerState, callback=None):
    """Projected damped-Newton epsilon-subgradient iteration.

    ``m <- P[l,u](m - a_l * zeta / clamp(gamma2 + beta))`` with
    ``a_l = C / (l + 1)`` and the clamp onto ``[delta_l^-1/2, delta_l^1/2]``,
    ``delta_l = 1 + C2 / (l + 1)^2``.

    Returns ``(m, certificate)``; on exhaustion the iterate with the smallest
    ``||eta||`` is returned with ``condition_met = MAXITER``. ``callback(l, m)``
    sees every iterate.
    """
    m_prime = np.asarray(m_prime, dtype=np.float64)
    m_bar = np.asarray(m_bar, dtype=np.float64)
    m = np.clip(np.asarray(m0, dtype=np.float64), bounds.l, bounds.u)
    best = None
    for l in range(sched.max_inner + 1):
        if callback is not None:
            callback(l, m)
        delta = _delta(sched, term, l)
        g1, g2 = gradients_delta(m, m_prime, delta, model)
        zeta = g1 + beta * (m - m_bar)
        eta = project_subgradient(zeta, m, bounds)
        cert = check_termination(m, eta, state, term, delta, iterations=l)
        cert.grad_evals = l + 1
        if cert.certified:
            return m, cert
        if best is None or cert.eta_norm < best[1].eta_norm:
            best = (m, cert)
        if l == sched.max_inner:
            break
        root = math.sqrt(sched.clamp(l))
        scale = np.clip(g2 + beta, 1.0 / root, root)
        m = np.clip(m - sched.step(l) * zeta / scale, bounds.l, bounds.u)
    m_best, c_best = best
    c_best.iterations = sched.max_inner
    c_best.grad_evals = sched.max_inner + 1
    return m_best, c_best


def mm_update(q, m_bar, beta):
    """Closed-form minimizer of the EM surrogate plus the quadratic term.

    ``(beta m_bar - 1 + sqrt((beta m_bar - 1)^2 + 4 q beta)) / (2 beta)``,
    evaluated without cancellation when ``beta m_bar < 1``.
    """
    q = np.asarray(q, dtype=np.float64)
    a = beta * np.asarray(m_bar, dtype=np.float64) - 1.0
    root = np.sqrt(a * a + 4.0 * q * beta)
    with np.errstate(invalid="ignore", divide="ignore"):
        neg = np.where(root - a > 0, 2.0 * q / (root - a), 0.0)
    out = np.where(a >= 0, (a + root) / (2.0 * beta), neg)
    return float(out) if out.ndim == 0 else out


def _safe_q(m, m_prime, model, delta):
    q = np.asarray(conditional_mean_q(m, m_prime, model, delta))
    if np.all(np.isfinite(q)):
        return q
    q = np.asarray(conditional_mean_q(m, m_prime, model, 2 * delta))
    if not np.all(np.isfinite(q)):
        raise FloatingPointError("posterior mean of the photon count is not finite")
    return q


def mm_inner(m0, m_prime, m_bar, beta, model: NoiseModel, sched: NewtonSchedule, term: TerminationInputs,
             state: InnerState, bounds: Bounds | None = None, callback=None):
    """Majorization-minimization (EM) iteration for the same subproblem.

    Iterates stay strictly positive; they are capped at ``u``. Pixels within
    ``MM_SNAP`` of ``l`` are certified and returned at ``l``. ``callback(l, m)``
    sees every raw (unsnapped) iterate.
    """
    bounds = term.bounds if bounds is None else bounds
    m_prime = np.asarray(m_prime, dtype=np.float64)
    m_bar = np.asarray(m_bar, dtype=np.float64)
    floor = max(bounds.l, MM_FLOOR)
    m = np.clip(np.asarray(m0, dtype=np.float64), floor, bounds.u)
    best = None
    warned = False
    for l in range(sched.max_inner + 1):
        if callback is not None:
            callback(l, m)
        delta = _delta(sched, term, l)
        m_c = np.where(m <= bounds.l + MM_SNAP, bounds.l, m)
        g1 = gradients_delta(m_c, m_prime, delta, model, second=False)[0]
        eta = project_subgradient(g1 + beta * (m_c - m_bar), m_c, bounds)
        cert = check_termination(m_c, eta, state, term, delta, iterations=l)
        cert.grad_evals = l + 1
        if cert.certified:
            return m_c, cert
        if best is None or cert.eta_norm < best[1].eta_norm:
            best = (m_c, cert)
        if l == sched.max_inner:
            break
        q = _safe_q(m, m_prime, model, delta)
        m_next = mm_update(q, m_bar, beta)
        if not warned and np.any(m_next >= bounds.u):
            log.warning("MM iterate reached the upper bound u=%g; capping", bounds.u)
            warned = True
        m = np.clip(m_next, floor, bounds.u)
    m_best, c_best = best
    c_best.iterations = sched.max_inner
    c_best.grad_evals = sched.max_inner + 1
    return m_best, c_best
