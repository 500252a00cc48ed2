"""Input checks shared by the estimator wrapper."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

__all__ = ["check_image", "check_positive", "check_choice", "check_kernel"]


def check_image(X, name="X", allow_stack=True) -> np.ndarray:
    """Finite float64 image ``(h, w)``, or stack ``(n, h, w)`` when ``allow_stack``."""
    arr = check_array(X, dtype=np.float64, allow_nd=True, ensure_min_samples=2, ensure_min_features=2,
                      input_name=name)
    if arr.ndim == 2 or (allow_stack and arr.ndim == 3):
        return arr
    raise ValueError(f"{name} must be a 2-D image{' or a 3-D stack' if allow_stack else ''}, got ndim={arr.ndim}")


def check_positive(value, name, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind) or not value > 0:
        raise ValueError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return value


def check_choice(value, options, name):
    if value not in options:
        raise ValueError(f"{name} must be one of {options}, got {value!r}")
    return value


def check_kernel(kernel) -> np.ndarray:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or not np.all(np.isfinite(k)):
        raise ValueError("psf must be a finite 2-D kernel")
    if not k.sum() > 0:
        raise ValueError("psf must have a positive sum")
    return k
