"""PSNR and SSIM with fixed conventions.

``data_range`` defaults to ``max(target)``.  SSIM uses the canonical 11x11
Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, and averages the SSIM map
over the valid region only (no padding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor
from .errors import ShapeError

WIN_SIZE = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    data_range: float
    win_size: int = WIN_SIZE
    sigma: float = SIGMA
    k1: float = K1
    k2: float = K2


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    b = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return np.squeeze(a), np.squeeze(b)


def _range(target: np.ndarray, data_range) -> float:
    data_range = float(target.max()) if data_range is None else float(data_range)
    if not data_range > 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    return data_range


def psnr(pred, target, data_range=None) -> float:
    """``10 log10(range^2 / MSE)``; identical images give ``math.inf``."""
    a, b = _pair(pred, target)
    data_range = _range(b, data_range)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def gaussian_window(size: int = WIN_SIZE, sigma: float = SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    rows = sliding_window_view(img, n, axis=0) @ g
    return sliding_window_view(rows, n, axis=1) @ g


def ssim(pred, target, data_range=None) -> float:
    a, b = _pair(pred, target)
    if a.ndim != 2:
        raise ShapeError(f"ssim expects a single 2-D image, got shape {a.shape}")
    if min(a.shape) < WIN_SIZE:
        raise ShapeError(f"image {a.shape} is smaller than the {WIN_SIZE}x{WIN_SIZE} window")
    data_range = _range(b, data_range)
    g = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def evaluate(pred, target, data_range=None) -> MetricReport:
    _, b = _pair(pred, target)
    data_range = _range(b, data_range)
    return MetricReport(psnr(pred, target, data_range), ssim(pred, target, data_range), data_range)
