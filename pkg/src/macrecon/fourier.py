"""Centered, orthonormal 2-D DFT over the two trailing axes.

The zero-frequency sample sits at index ``(H // 2, W // 2)`` of every k-space
grid, matching the layout of the sampling masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError
from . import mact

_AXES = (-2, -1)


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal forward DFT of a real or complex array."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=_AXES), norm="ortho"), axes=_AXES)


def ifft2c(k: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k, axes=_AXES), norm="ortho"), axes=_AXES)


@dataclass(frozen=True)
class KSpaceGrid:
    """Complex k-space stored as two real planes; leading batch axes allowed."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"k-space planes differ in shape: {self.re.shape} vs {self.im.shape}")
        if self.re.ndim < 2:
            raise ShapeError("k-space grid needs at least two axes")

    @classmethod
    def from_complex(cls, k: np.ndarray, dtype=None) -> "KSpaceGrid":
        dtype = dtype or (np.float32 if k.dtype == np.complex64 else np.float64)
        return cls(np.ascontiguousarray(k.real, dtype=dtype), np.ascontiguousarray(k.imag, dtype=dtype))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    @property
    def height(self) -> int:
        return self.re.shape[-2]

    @property
    def width(self) -> int:
        return self.re.shape[-1]

    def complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def __getitem__(self, idx) -> "KSpaceGrid":
        return KSpaceGrid(self.re[idx], self.im[idx])

    def astype(self, dtype) -> "KSpaceGrid":
        return KSpaceGrid(self.re.astype(dtype, copy=False), self.im.astype(dtype, copy=False))

    def to_array(self) -> np.ndarray:
        """Stack as ``(2, ..., H, W)``: plane 0 real, plane 1 imaginary."""
        return np.stack([self.re, self.im])

    @classmethod
    def from_array(cls, planes: np.ndarray) -> "KSpaceGrid":
        if planes.shape[0] != 2:
            raise ShapeError(f"expected a leading axis of 2 planes, got shape {planes.shape}")
        return cls(np.ascontiguousarray(planes[0]), np.ascontiguousarray(planes[1]))

    def save(self, path) -> None:
        mact.save(path, self.to_array())

    @classmethod
    def load(cls, path) -> "KSpaceGrid":
        return cls.from_array(mact.load(path))


def _real_array(image) -> np.ndarray:
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if np.iscomplexobj(arr):
        raise ShapeError("forward_dft expects a real image")
    if arr.ndim < 2:
        raise ShapeError(f"forward_dft expects at least 2 axes, got shape {arr.shape}")
    return arr if arr.dtype.kind == "f" else arr.astype(np.float64)


def forward_dft(image) -> KSpaceGrid:
    arr = _real_array(image)
    return KSpaceGrid.from_complex(fft2c(arr), dtype=arr.dtype)


def inverse_dft(k: KSpaceGrid) -> tuple[Tensor, Tensor]:
    """Inverse transform; returns the real and imaginary image planes."""
    x = ifft2c(k.complex())
    return Tensor(x.real.astype(k.re.dtype)), Tensor(x.imag.astype(k.re.dtype))
