"""scikit-learn style wrapper around :func:`pgadmm.admm.admm_restore`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .admm import AdmmConfig, admm_restore
from .image import CirculantOperator, make_gaussian_psf
from .inner import NewtonSchedule
from .likelihood import NoiseModel
from .validation import check_choice, check_image, check_kernel, check_positive

__all__ = ["PGDeblur"]


class PGDeblur(TransformerMixin, BaseEstimator):
    """Deblur images degraded by blur and mixed Poisson-Gaussian noise.

    ``fit`` validates the parameters and builds the blur operator for the
    image size; ``transform`` restores one image or a stack of images.

    Parameters
    ----------
    lam : float
        Weight of the Hessian-Schatten regularizer.
    q : {1, 2}
        Schatten order.
    solver : {'newton', 'mm'}
        Inner solver for the likelihood prox.
    alpha, sigma, alpha_prime : float
        Gain, Gaussian noise std and pre-Poisson scale of the noise model.
    psf : array_like, optional
        Centered blur kernel; normalized to unit sum. Defaults to a Gaussian
        with std ``psf_sigma``.
    u_prime : float, optional
        Upper bound on restored pixels; chosen from the data when ``None``.

    Attributes
    ----------
    config_ : AdmmConfig
    operator_ : CirculantOperator
        Blur operator including ``alpha_prime``.
    image_shape_ : tuple
    history_ : list
        Iteration records of each image restored by the last ``transform``.
    """

    def __init__(self, lam=0.1, beta=1.0, q=2, solver="newton", alpha=1.0, sigma=1.0, alpha_prime=1.0,
                 psf=None, psf_sigma=1.5, u_prime=None, stop_tol=1e-4, max_outer=300, theta0=1.0,
                 rho=0.99, max_inner=500):
        self.lam = lam
        self.beta = beta
        self.q = q
        self.solver = solver
        self.alpha = alpha
        self.sigma = sigma
        self.alpha_prime = alpha_prime
        self.psf = psf
        self.psf_sigma = psf_sigma
        self.u_prime = u_prime
        self.stop_tol = stop_tol
        self.max_outer = max_outer
        self.theta0 = theta0
        self.rho = rho
        self.max_inner = max_inner

    def _validate_params(self):
        for name in ("lam", "beta", "alpha", "sigma", "alpha_prime", "stop_tol", "theta0", "rho"):
            check_positive(getattr(self, name), name)
        check_positive(self.max_outer, "max_outer", integer=True)
        check_positive(self.max_inner, "max_inner", integer=True)
        check_choice(self.q, (1, 2), "q")
        check_choice(self.solver, ("newton", "mm"), "solver")
        if self.u_prime is not None:
            check_positive(self.u_prime, "u_prime")
        if self.psf is None:
            check_positive(self.psf_sigma, "psf_sigma")

    def _operator(self, shape):
        h, w = shape
        if self.psf is None:
            H = make_gaussian_psf(w, h, self.psf_sigma)
        else:
            k = check_kernel(self.psf)
            H = CirculantOperator.from_kernel(k / k.sum(), shape, center=(k.shape[0] // 2, k.shape[1] // 2))
        return H.scaled(self.alpha_prime)

    def fit(self, X, y=None):
        self._validate_params()
        X = check_image(X)
        model = NoiseModel(alpha=self.alpha, sigma=self.sigma, alpha_prime=self.alpha_prime)
        self.config_ = AdmmConfig(lam=self.lam, beta=self.beta, q=self.q, rho=self.rho, theta0=self.theta0,
                                  inner_solver=self.solver, newton_sched=NewtonSchedule(max_inner=self.max_inner),
                                  stop_tol=self.stop_tol, max_outer=self.max_outer, model=model,
                                  u_prime=self.u_prime)
        self.image_shape_ = X.shape[-2:]
        self.operator_ = self._operator(self.image_shape_)
        return self

    def transform(self, X):
        check_is_fitted(self, ("config_", "operator_"))
        X = check_image(X)
        if X.shape[-2:] != tuple(self.image_shape_):
            raise ValueError(f"image shape {X.shape[-2:]} differs from fitted shape {self.image_shape_}")
        stack = X if X.ndim == 3 else X[None]
        out, self.history_ = [], []
        for img in stack:
            g, records = admm_restore(img, self.operator_, self.config_)
            out.append(g)
            self.history_.append(records)
        out = np.stack(out)
        return out if X.ndim == 3 else out[0]
