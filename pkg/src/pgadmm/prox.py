"""Closed-form ADMM sub-steps: FFT quadratic solve, Hessian shrinkage, clipping.

The regularizer acts on the symmetric matrix ``S(v) = [[v1, v2], [v2, v3]]``
built from the triplet ``v = (Dxx g, Dxy g, Dyy g)``. Its shrinkage formulas
are exact proximal maps in the Frobenius metric of ``S``, i.e. the 3-vector
metric with weights ``(1, 2, 1)``. :data:`HESSIAN_WEIGHTS` carries those
weights into the quadratic coupling of the g-step so every ADMM sub-step
stays an exact minimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import CirculantOperator
from .likelihood import Bounds

__all__ = [
    "HESSIAN_WEIGHTS",
    "QuadSolveContext",
    "make_context",
    "solve_g",
    "shrink_hessian",
    "clip_b",
    "hessian_eigenvalues",
    "schatten_norm",
    "weighted_sq_norm",
]

HESSIAN_WEIGHTS = (1.0, 2.0, 1.0)


@dataclass(frozen=True)
class QuadSolveContext:
    """Cached inverse spectrum of ``I + D^T W D + H^T H``."""

    H: CirculantOperator
    ops: tuple
    weights: tuple
    inv_freq: np.ndarray


def make_context(H: CirculantOperator, ops, weights=HESSIAN_WEIGHTS) -> QuadSolveContext:
    ops = tuple(ops)
    for op in ops:
        if op.shape != H.shape:
            raise ValueError("derivative operators and PSF must share one grid")
    denom = 1.0 + np.abs(H.freq) ** 2
    for w, op in zip(weights, ops):
        denom = denom + w * np.abs(op.freq) ** 2
    return QuadSolveContext(H, ops, tuple(float(w) for w in weights), 1.0 / denom)


def solve_g(ctx: QuadSolveContext, m, m_hat, d, d_hat, b, b_hat, beta: float) -> np.ndarray:
    """Minimize the quadratic g-subproblem exactly.

    Solves ``(I + D^T W D + H^T H) g = b + b_hat/beta + D^T W (d + d_hat/beta)
    + H^T (m + m_hat/beta)`` with one forward FFT per input term and a
    single inverse FFT.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    shape = ctx.H.shape
    m, m_hat, b, b_hat = (np.asarray(x, dtype=np.float64) for x in (m, m_hat, b, b_hat))
    d, d_hat = np.asarray(d, dtype=np.float64), np.asarray(d_hat, dtype=np.float64)
    for x in (m, m_hat, b, b_hat):
        if x.shape != shape:
            raise ValueError(f"image shape {x.shape} does not match operator {shape}")
    for x in (d, d_hat):
        if x.shape != (3,) + shape:
            raise ValueError(f"Hessian field shape {x.shape} does not match {(3,) + shape}")
    rhs = np.fft.fft2(b + b_hat / beta)
    rhs += np.conj(ctx.H.freq) * np.fft.fft2(m + m_hat / beta)
    fd = np.fft.fft2(d + d_hat / beta)
    for w, op, comp in zip(ctx.weights, ctx.ops, fd):
        rhs += w * np.conj(op.freq) * comp
    return np.real(np.fft.ifft2(ctx.inv_freq * rhs))


def hessian_eigenvalues(v):
    """Eigenvalues ``(lam_plus, lam_minus)`` of ``[[v1, v2], [v2, v3]]``."""
    v1, v2, v3 = v
    mean = 0.5 * (v1 + v3)
    rad = np.hypot(0.5 * (v1 - v3), v2)
    return mean + rad, mean - rad


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def shrink_hessian(d_bar, t: float, q: int) -> np.ndarray:
    """Per-pixel proximal map of ``t * ||eig(S(v))||_q`` for ``q`` in {1, 2}.

    ``q = 2`` shrinks the Frobenius norm of ``S(v)``; ``q = 1`` soft-thresholds
    its two eigenvalues and rebuilds the matrix.
    """
    if not t > 0:
        raise ValueError("threshold must be positive")
    v = np.asarray(d_bar, dtype=np.float64)
    if v.shape[0] != 3:
        raise ValueError("Hessian field must have 3 components on axis 0")
    if q == 2:
        nrm = np.sqrt(weighted_sq_norm(v, axis_sum=False))
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(nrm > t, 1.0 - t / nrm, 0.0)
        return v * scale
    if q == 1:
        lp, lm = hessian_eigenvalues(v)
        mp, mm = _soft(lp, t), _soft(lm, t)
        gap = lp - lm
        # coincident eigenvalues: S is a multiple of I and so is the result
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(gap > 0, (mp - mm) / gap, 0.0)
        out = np.empty_like(v)
        out[0] = mm + c * (v[0] - lm)
        out[1] = c * v[1]
        out[2] = mm + c * (v[2] - lm)
        return out
    raise ValueError(f"q must be 1 or 2, got {q}")


def weighted_sq_norm(v, weights=HESSIAN_WEIGHTS, axis_sum=True):
    """Squared Frobenius norm of ``S(v)``; summed over pixels unless ``axis_sum`` is False."""
    v = np.asarray(v, dtype=np.float64)
    sq = weights[0] * v[0] ** 2 + weights[1] * v[1] ** 2 + weights[2] * v[2] ** 2
    return float(sq.sum()) if axis_sum else sq


def schatten_norm(v, q: int) -> float:
    """Sum over pixels of the Schatten-q norm of ``S(v)``."""
    v = np.asarray(v, dtype=np.float64)
    if q == 2:
        return float(np.sqrt(weighted_sq_norm(v, axis_sum=False)).sum())
    if q == 1:
        lp, lm = hessian_eigenvalues(v)
        return float((np.abs(lp) + np.abs(lm)).sum())
    raise ValueError(f"q must be 1 or 2, got {q}")


def clip_b(b_bar, bounds: Bounds) -> np.ndarray:
    """Projection onto ``[0, u_prime]``."""
    return np.clip(np.asarray(b_bar, dtype=np.float64), 0.0, bounds.u_prime)
