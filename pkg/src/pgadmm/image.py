"""Periodic 2-D convolution operators and the second-derivative filter bank.

Images are plain ``float64`` arrays of shape ``(height, width)``. A
:class:`CirculantOperator` stores the 2-D DFT of a periodic convolution
kernel, so applying it (or its adjoint) costs two FFTs.

Hessian fields are arrays of shape ``(3, height, width)`` holding the
triplet ``(Dxx g, Dxy g, Dyy g)`` at every pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CirculantOperator",
    "apply",
    "apply_adjoint",
    "make_derivative_operators",
    "make_gaussian_psf",
    "apply_hessian",
    "apply_hessian_adjoint",
]


@dataclass(frozen=True)
class CirculantOperator:
    """Frequency response of a periodic convolution on a fixed grid."""

    freq: np.ndarray

    def __post_init__(self):
        freq = np.asarray(self.freq, dtype=np.complex128)
        if freq.ndim != 2:
            raise ValueError(f"frequency response must be 2-D, got shape {freq.shape}")
        object.__setattr__(self, "freq", freq)

    @property
    def shape(self) -> tuple[int, int]:
        return self.freq.shape

    @property
    def height(self) -> int:
        return self.freq.shape[0]

    @property
    def width(self) -> int:
        return self.freq.shape[1]

    @classmethod
    def from_kernel(cls, kernel, shape=None, center=None) -> "CirculantOperator":
        """Build the operator of a spatial kernel, periodically wrapped.

        Kernels larger than the grid wrap around and overlapping taps add up.

        Parameters
        ----------
        kernel : array_like
            2-D convolution kernel.
        shape : tuple of int, optional
            Grid shape ``(height, width)``. Defaults to the kernel shape.
        center : tuple of int, optional
            Kernel index placed at the origin. Defaults to ``(0, 0)``; use
            ``(kh // 2, kw // 2)`` for a centered kernel.
        """
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2:
            raise ValueError("kernel must be 2-D")
        if shape is None:
            shape = kernel.shape
        h, w = shape
        kh, kw = kernel.shape
        cy, cx = (0, 0) if center is None else center
        padded = np.zeros((h, w))
        rows = (np.arange(kh) - cy) % h
        cols = (np.arange(kw) - cx) % w
        np.add.at(padded, (rows[:, None], cols[None, :]), kernel)
        return cls(np.fft.fft2(padded))

    @classmethod
    def identity(cls, shape) -> "CirculantOperator":
        return cls(np.ones(shape, dtype=np.complex128))

    def kernel(self) -> np.ndarray:
        """Spatial kernel with its origin at index ``(0, 0)``."""
        return np.real(np.fft.ifft2(self.freq))

    def centered_kernel(self) -> np.ndarray:
        """Spatial kernel with its origin moved to ``(h // 2, w // 2)``."""
        return np.fft.fftshift(self.kernel())

    def norm1(self) -> float:
        """Induced 1-norm (max absolute column sum) of the circulant matrix."""
        return float(np.abs(self.kernel()).sum())

    def scaled(self, factor: float) -> "CirculantOperator":
        return CirculantOperator(self.freq * factor)

    def __matmul__(self, x):
        return apply(self, x)


def _check_shape(op: CirculantOperator, x: np.ndarray):
    if x.shape[-2:] != op.shape:
        raise ValueError(f"image shape {x.shape[-2:]} does not match operator {op.shape}")


def apply(op: CirculantOperator, x) -> np.ndarray:
    """Periodic convolution ``ifft(freq * fft(x))``, real part."""
    x = np.asarray(x, dtype=np.float64)
    _check_shape(op, x)
    return np.real(np.fft.ifft2(op.freq * np.fft.fft2(x)))


def apply_adjoint(op: CirculantOperator, x) -> np.ndarray:
    """Transpose of :func:`apply` (multiplication by the conjugate response)."""
    x = np.asarray(x, dtype=np.float64)
    _check_shape(op, x)
    return np.real(np.fft.ifft2(np.conj(op.freq) * np.fft.fft2(x)))


def make_derivative_operators(width: int, height: int):
    """Second-derivative operators ``(Dxx, Dxy, Dyy)`` on a periodic grid.

    ``Dxx`` convolves rows with ``[-1, 2, -1]``, ``Dyy`` is its transpose and
    ``Dxy`` uses the 2x2 kernel ``[[1, -1], [-1, 1]]``.
    """
    if width < 2 or height < 2:
        raise ValueError(f"grid must be at least 2x2, got {width}x{height}")
    shape = (height, width)
    dxx = CirculantOperator.from_kernel([[-1.0, 2.0, -1.0]], shape, center=(0, 1))
    dyy = CirculantOperator.from_kernel([[-1.0], [2.0], [-1.0]], shape, center=(1, 0))
    dxy = CirculantOperator.from_kernel([[1.0, -1.0], [-1.0, 1.0]], shape)
    return dxx, dxy, dyy


def apply_hessian(ops, x) -> np.ndarray:
    """Stack ``(Dxx x, Dxy x, Dyy x)`` into a ``(3, h, w)`` field."""
    x = np.asarray(x, dtype=np.float64)
    fx = np.fft.fft2(x)
    freqs = np.stack([op.freq for op in ops])
    return np.real(np.fft.ifft2(freqs * fx))


def apply_hessian_adjoint(ops, field, weights=(1.0, 1.0, 1.0)) -> np.ndarray:
    """``sum_i w_i D_i^T field_i`` for a ``(3, h, w)`` field."""
    field = np.asarray(field, dtype=np.float64)
    ff = np.fft.fft2(field)
    acc = np.zeros(field.shape[1:], dtype=np.complex128)
    for wgt, op, comp in zip(weights, ops, ff):
        acc += wgt * np.conj(op.freq) * comp
    return np.real(np.fft.ifft2(acc))


def make_gaussian_psf(width: int, height: int, sigma_psf: float) -> CirculantOperator:
    """Periodic Gaussian blur with unit DC gain.

    The kernel is sampled on wrapped distances, so it is symmetric and the
    operator is self-adjoint.
    """
    if not sigma_psf > 0:
        raise ValueError(f"sigma_psf must be positive, got {sigma_psf}")
    dy = np.minimum(np.arange(height), height - np.arange(height))
    dx = np.minimum(np.arange(width), width - np.arange(width))
    k = np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2.0 * sigma_psf**2))
    k /= k.sum()
    return CirculantOperator(np.fft.fft2(k))
