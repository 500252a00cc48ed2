"""Deblurring under mixed Poisson-Gaussian noise with Hessian-Schatten priors.

The restoration is an ADMM scheme whose likelihood sub-step is solved
inexactly, by damped Newton or MM, with verifiable stopping certificates.
"""

from .admm import AdmmConfig, ConvergenceError, IterationRecord, admm_restore, derive_bounds, mae, objective
from .estimator import PGDeblur
from .image import CirculantOperator, make_derivative_operators, make_gaussian_psf
from .inner import Condition, InnerCertificate, NewtonSchedule, mm_inner, newton_inner
from .likelihood import Bounds, NoiseModel, error_bound, grad1_delta, grad2_delta, neg_log_likelihood, s_delta
from .prox import clip_b, shrink_hessian, solve_g
from .sim import SimSpec, SweepSpec, make_phantom, run_sweep, simulate

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "ConvergenceError", "IterationRecord", "admm_restore", "derive_bounds", "mae", "objective",
    "PGDeblur", "CirculantOperator", "make_derivative_operators", "make_gaussian_psf", "Condition",
    "InnerCertificate", "NewtonSchedule", "mm_inner", "newton_inner", "Bounds", "NoiseModel", "error_bound",
    "grad1_delta", "grad2_delta", "neg_log_likelihood", "s_delta", "clip_b", "shrink_hessian", "solve_g",
    "SimSpec", "SweepSpec", "make_phantom", "run_sweep", "simulate",
]
