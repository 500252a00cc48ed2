"""Outer ADMM loop for Poisson-Gaussian deblurring with Hessian-Schatten priors.

Splitting ``m = Hg``, ``d = Dg``, ``b = g``, each outer iteration runs

1. exact FFT solve for ``g``;
2. a certified inexact prox of the likelihood for ``m`` (damped Newton or MM);
3. Hessian-Schatten shrinkage for ``d``;
4. clipping for ``b``;
5. multiplier updates.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .image import CirculantOperator, apply, apply_hessian, make_derivative_operators
from .inner import (
    Condition,
    InnerCertificate,
    InnerState,
    NewtonSchedule,
    TerminationInputs,
    min_certified_delta,
    mm_inner,
    newton_inner,
    update_dual_accumulator,
)
from .likelihood import (
    REFERENCE_DELTA,
    Bounds,
    NoiseModel,
    gradients_delta,
    neg_log_likelihood,
    project_subgradient,
)
from .prox import clip_b, make_context, schatten_norm, shrink_hessian, solve_g, weighted_sq_norm

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "IterationRecord",
    "ConvergenceError",
    "admm_restore",
    "objective",
    "derive_bounds",
    "mae",
    "default_u_prime",
    "TRACE_COLUMNS",
    "write_trace",
    "read_trace",
]

log = logging.getLogger(__name__)

SOLVERS = ("newton", "mm")


class ConvergenceError(RuntimeError):
    """Inner solves failed to certify, or the iteration produced NaNs."""

    def __init__(self, message, certificate: InnerCertificate | None = None, records=None):
        super().__init__(message)
        self.certificate = certificate
        self.records = records or []


@dataclass(frozen=True)
class AdmmConfig:
    """Parameters of a restoration run.

    ``u_prime`` caps restored pixels; ``None`` picks ``4 * max(1, max(m') / alpha)``
    at run time. ``bounds``, when given, overrides the box derived from
    ``H`` and ``u_prime``.
    """

    lam: float = 1.0
    beta: float = 1.0
    q: int = 2
    rho: float = 0.99
    theta0: float = 1.0
    inner_solver: str = "newton"
    newton_sched: NewtonSchedule = field(default_factory=NewtonSchedule)
    stop_tol: float = 1e-4
    max_outer: int = 300
    model: NoiseModel = field(default_factory=NoiseModel)
    u_prime: float | None = None
    bounds: Bounds | None = None
    max_time_s: float | None = None
    abort_after: int = 3

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.q not in (1, 2):
            raise ValueError("q must be 1 or 2")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if not self.theta0 > 0:
            raise ValueError("theta0 must be positive")
        if self.inner_solver not in SOLVERS:
            raise ValueError(f"inner_solver must be one of {SOLVERS}")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be positive")
        if self.u_prime is not None and not self.u_prime > 0:
            raise ValueError("u_prime must be positive")

    def theta(self, k: int) -> float:
        return self.theta0 / (k + 1) ** 2


@dataclass
class AdmmState:
    g: np.ndarray
    m: np.ndarray
    d: np.ndarray
    b: np.ndarray
    m_hat: np.ndarray
    d_hat: np.ndarray
    b_hat: np.ndarray
    inner: InnerState
    k: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdmmState":
        z = np.zeros(shape)
        return cls(z.copy(), z.copy(), np.zeros((3,) + shape), z.copy(), z.copy(),
                   np.zeros((3,) + shape), z.copy(), InnerState.zeros(shape))


TRACE_COLUMNS = (
    "k", "cost", "residual_m", "residual_d", "residual_b", "c_k", "inner_iters",
    "inner_condition", "mae", "elapsed_s",
    "theta_k", "rho", "eta_norm", "approx_err", "cond1_lhs", "cond2_lhs", "cross_term",
    "wm_norm", "err_accum", "denom", "delta_used", "grad_evals", "rel_change",
)


@dataclass
class IterationRecord:
    k: int
    cost: float
    residual_m: float
    residual_d: float
    residual_b: float
    c_k: float
    inner_iters: int
    inner_condition: str
    mae: float | None
    elapsed: float
    theta_k: float
    rho: float
    eta_norm: float
    approx_err: float
    cond1_lhs: float
    cond2_lhs: float
    cross_term: float
    wm_norm: float
    err_accum: float
    denom: float
    delta_used: float
    grad_evals: int
    rel_change: float

    def row(self) -> dict:
        out = asdict(self)
        out["elapsed_s"] = out.pop("elapsed")
        return {c: out[c] for c in TRACE_COLUMNS}


def mae(a, b) -> float:
    """Mean absolute error ``mean |a - b|``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def derive_bounds(H: CirculantOperator, u_prime: float) -> Bounds:
    """``[0, ||H||_1 u']`` on ``Hg`` for images in ``[0, u']``."""
    if not u_prime > 0:
        raise ValueError("u_prime must be positive")
    return Bounds(0.0, H.norm1() * u_prime, u_prime)


def default_u_prime(m_prime, model: NoiseModel) -> float:
    return 4.0 * max(1.0, float(np.max(m_prime)) / model.alpha)


def _resolve_bounds(m_prime, H, cfg: AdmmConfig) -> Bounds:
    if cfg.bounds is not None:
        return cfg.bounds
    u_prime = cfg.u_prime if cfg.u_prime is not None else default_u_prime(m_prime, cfg.model)
    return derive_bounds(H, u_prime)


def objective(g, m_prime, H: CirculantOperator, D_ops, cfg: AdmmConfig, bounds: Bounds | None = None) -> float:
    """Full cost: extended likelihood of ``Hg`` + ``lam`` * Hessian-Schatten norm + box indicator.

    The likelihood uses the reference truncation width. Blurred values within
    rounding distance of ``[l, u]`` are snapped onto the box.
    """
    g = np.asarray(g, dtype=np.float64)
    m_prime = np.asarray(m_prime, dtype=np.float64)
    bounds = bounds or _resolve_bounds(m_prime, H, cfg)
    if np.any(g < 0) or np.any(g > bounds.u_prime):
        return math.inf
    hg = apply(H, g)
    tol = 1e-9 * (1.0 + bounds.u)
    if np.any(hg < bounds.l - tol) or np.any(hg > bounds.u + tol):
        return math.inf
    hg = np.clip(hg, bounds.l, bounds.u)
    data = neg_log_likelihood(hg, m_prime, REFERENCE_DELTA, cfg.model, bounds)
    return data + cfg.lam * schatten_norm(apply_hessian(D_ops, g), cfg.q)


def admm_restore(m_prime, H: CirculantOperator, cfg: AdmmConfig, truth=None, callback=None):
    """Restore ``m_prime`` blurred by ``H`` under the configured noise model.

    Parameters
    ----------
    m_prime : ndarray
        Measured image, shape ``(height, width)``.
    H : CirculantOperator
        Blur operator, including any pre-Poisson scale ``alpha_prime``.
    cfg : AdmmConfig
    truth : ndarray, optional
        Ground truth; when given, each record carries the MAE.
    callback : callable, optional
        Called as ``callback(state, record)`` after every outer iteration.

    Returns
    -------
    g : ndarray
        Restored image, projected onto ``[0, u']``.
    records : list of IterationRecord

    Raises
    ------
    ConvergenceError
        When ``cfg.abort_after`` consecutive inner solves end uncertified, or
        on NaN.
    """
    m_prime = np.asarray(m_prime, dtype=np.float64)
    if m_prime.ndim != 2:
        raise ValueError("measured image must be 2-D")
    if not np.all(np.isfinite(m_prime)):
        raise ValueError("measured image contains non-finite values")
    if m_prime.shape != H.shape:
        raise ValueError(f"image shape {m_prime.shape} does not match PSF {H.shape}")
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
    shape = m_prime.shape
    beta, model = cfg.beta, cfg.model
    bounds = _resolve_bounds(m_prime, H, cfg)
    ops = make_derivative_operators(shape[1], shape[0])
    ctx = make_context(H, ops)
    sched = cfg.newton_sched
    st = AdmmState.zeros(shape)
    records: list[IterationRecord] = []
    uncertified = 0
    t0 = time.perf_counter()

    for k in range(cfg.max_outer):
        g_prev = st.g
        # Step 1
        g = solve_g(ctx, st.m, st.m_hat, st.d, st.d_hat, st.b, st.b_hat, beta)
        hg = apply(H, g)
        dg = apply_hessian(ops, g)
        # Step 2a
        c_k = weighted_sq_norm(dg - st.d) + float(np.sum((g - st.b) ** 2))
        m_bar = hg - st.m_hat / beta
        theta = cfg.theta(k)
        floor = 1.0
        if sched.error_share > 0:
            floor = min_certified_delta(m_prime, sched.error_share * theta, bounds, model)
        term = TerminationInputs(theta, cfg.rho, c_k, hg, m_prime, bounds, model, floor)
        # Step 2b
        if cfg.inner_solver == "newton":
            m, cert = newton_inner(st.m, m_prime, m_bar, beta, bounds, model, sched, term, st.inner)
        else:
            m, cert = mm_inner(st.m, m_prime, m_bar, beta, model, sched, term, st.inner, bounds)
        if cert.certified:
            uncertified = 0
        else:
            uncertified += 1
            log.warning("outer iteration %d: inner solve not certified (||eta||=%.3g)", k, cert.eta_norm)
        # Step 2c
        g1_ref = gradients_delta(m, m_prime, REFERENCE_DELTA, model, second=False)[0]
        eta_ref = project_subgradient(g1_ref + beta * (m - m_bar), m, bounds)
        inner_state = update_dual_accumulator(st.inner, eta_ref, cert.eta, beta, cert.delta_used, cert.approx_err)
        # Steps 3 and 4
        d = shrink_hessian(dg - st.d_hat / beta, cfg.lam / beta, cfg.q)
        b = clip_b(g - st.b_hat / beta, bounds)
        # Step 5
        r_m, r_d, r_b = hg - m, dg - d, g - b
        st = AdmmState(g, m, d, b, st.m_hat - beta * r_m, st.d_hat - beta * r_d, st.b_hat - beta * r_b,
                       inner_state, k + 1)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(m)) and np.all(np.isfinite(st.m_hat))):
            raise ConvergenceError(f"non-finite values at outer iteration {k}", cert, records)

        g_feas = clip_b(g, bounds)
        gnorm = float(np.linalg.norm(g))
        rel = float(np.linalg.norm(g - g_prev)) / gnorm if gnorm > 0 else math.inf
        rec = IterationRecord(
            k=k,
            cost=objective(g_feas, m_prime, H, ops, cfg, bounds),
            residual_m=float(np.linalg.norm(r_m)),
            residual_d=math.sqrt(weighted_sq_norm(r_d)),
            residual_b=float(np.linalg.norm(r_b)),
            c_k=c_k,
            inner_iters=cert.iterations,
            inner_condition=cert.condition_met.value,
            mae=mae(g_feas, truth) if truth is not None else None,
            elapsed=time.perf_counter() - t0,
            theta_k=theta,
            rho=cfg.rho,
            eta_norm=cert.eta_norm,
            approx_err=cert.approx_err,
            cond1_lhs=cert.cond1_lhs,
            cond2_lhs=cert.cond2_lhs,
            cross_term=cert.cross_term,
            wm_norm=cert.wm_norm,
            err_accum=cert.err_accum,
            denom=cert.denom,
            delta_used=cert.delta_used,
            grad_evals=cert.grad_evals,
            rel_change=rel,
        )
        records.append(rec)
        if callback is not None:
            callback(st, rec)
        if uncertified >= cfg.abort_after:
            raise ConvergenceError(
                f"inner solver uncertified for {uncertified} consecutive outer iterations", cert, records)
        if rel < cfg.stop_tol:
            break
        if cfg.max_time_s is not None and rec.elapsed >= cfg.max_time_s:
            break
    return clip_b(st.g, bounds), records


def write_trace(path, records, header: str = ""):
    """CSV trace, one row per outer iteration; ``header`` lines are written as ``# ...`` comments."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(TRACE_COLUMNS)
        for rec in records:
            row = rec.row()
            wr.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                         for c in TRACE_COLUMNS])


def read_trace(path):
    """Read a trace back as ``(header dict, list of row dicts)`` with numeric fields parsed."""
    header, lines = {}, []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                header[key.strip()] = val.strip()
            else:
                lines.append(line)
    rows = []
    for row in csv.DictReader(lines):
        out = {}
        for k, v in row.items():
            if k == "inner_condition":
                out[k] = v
            elif v == "":
                out[k] = None
            elif k in ("k", "inner_iters", "grad_evals"):
                out[k] = int(v)
            else:
                out[k] = float(v)
        rows.append(out)
    return header, rows
