"""Undersampling masks, retrospective undersampling and context encoding.

Masks live in the centered k-space layout used by :mod:`macrecon.fourier`.
Every generated mask is point-symmetric about the DC sample: a location is
sampled iff its conjugate partner is.  Images here are real, so their
spectra are Hermitian, and symmetric masks keep the real part of any
zero-filled or data-consistent image exactly consistent with the measured
samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import mact
from .autodiff import Tensor
from .errors import InfeasibleRateError, ShapeError
from .fourier import KSpaceGrid, fft2c, ifft2c

PATTERN_CODES = {"cartesian": 1, "gaussian": 2}
STUDY_CODES = {"cardiac": 1, "brain": 2}
ENCODINGS = ("r", "pattern", "study")
PHASE_AXIS = 0

DEFAULT_CENTER_FRACTION = {"cartesian": 0.08, "gaussian": 0.04}


@dataclass(frozen=True)
class AcquisitionContext:
    """One acquisition setting.

    ``encoding`` picks the vector handed to the weight predictor: ``"r"`` gives
    ``[R]``, ``"pattern"`` gives ``[R, pattern code]`` and ``"study"`` gives
    ``[R, study code]``.
    """

    acceleration: float
    pattern: str = "gaussian"
    study: str = "cardiac"
    encoding: str = "pattern"

    def __post_init__(self):
        if not self.acceleration >= 1:
            raise ValueError(f"acceleration must be >= 1, got {self.acceleration}")
        if self.pattern not in PATTERN_CODES:
            raise ValueError(f"unknown mask pattern {self.pattern!r}")
        if self.study not in STUDY_CODES:
            raise ValueError(f"unknown study {self.study!r}")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown context encoding {self.encoding!r}")

    @property
    def n_context(self) -> int:
        return 1 if self.encoding == "r" else 2

    @property
    def label(self) -> str:
        return f"{self.study}-{self.pattern}-{self.acceleration:g}x"


def encode_context(ctx: AcquisitionContext, dtype=np.float64) -> Tensor:
    if ctx.encoding == "r":
        values = [ctx.acceleration]
    elif ctx.encoding == "pattern":
        values = [ctx.acceleration, PATTERN_CODES[ctx.pattern]]
    else:
        values = [ctx.acceleration, STUDY_CODES[ctx.study]]
    return Tensor(np.array(values, dtype=dtype))


@dataclass(frozen=True)
class SamplingMask:
    grid: np.ndarray
    pattern: str
    target_acceleration: float
    center_fraction: float
    seed: int
    phase_axis: int = PHASE_AXIS

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def achieved_acceleration(self) -> float:
        return self.grid.size / float(self.grid.sum())

    def metadata(self) -> dict:
        return {
            "type": self.pattern,
            "R": self.target_acceleration,
            "center_fraction": self.center_fraction,
            "seed": self.seed,
            "phase_axis": self.phase_axis,
        }

    def save(self, path) -> None:
        path = Path(path)
        mact.save(path, self.grid.astype(np.float64))
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SamplingMask":
        path = Path(path)
        grid = mact.load(path)
        if grid.ndim != 2 or not np.isin(grid, (0.0, 1.0)).all():
            raise ShapeError(f"{path} is not a binary 2-D mask")
        sidecar = path.with_suffix(".json")
        meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return cls(
            grid=grid,
            pattern=meta.get("type", "custom"),
            target_acceleration=float(meta.get("R", grid.size / max(grid.sum(), 1.0))),
            center_fraction=float(meta.get("center_fraction", 0.0)),
            seed=int(meta.get("seed", 0)),
            phase_axis=int(meta.get("phase_axis", PHASE_AXIS)),
        )

    @classmethod
    def from_array(cls, grid, pattern="custom") -> "SamplingMask":
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 2 or not np.isin(grid, (0.0, 1.0)).all():
            raise ShapeError("mask must be a binary 2-D array")
        n = grid.sum()
        return cls(grid, pattern, grid.size / n if n else math.inf, 0.0, 0)


def mirror_index(i, n: int):
    """Index of the conjugate-symmetric partner along an axis of length ``n``."""
    return (2 * (n // 2) - i) % n


def _check_rate(r: float, center_fraction: float):
    if not r >= 1:
        raise InfeasibleRateError(f"acceleration must be >= 1, got {r}")
    if r > 1 and not 0 < center_fraction < 1 / r:
        raise InfeasibleRateError(f"center_fraction must lie in (0, 1/R) = (0, {1 / r:.4g}), got {center_fraction}")


def make_cartesian_mask(h: int, w: int, r: float, center_fraction: float = 0.08, seed: int = 0) -> SamplingMask:
    """Fully sampled phase-encode rows: a central block plus random symmetric pairs.

    The central block is the smallest DC-centred symmetric run of rows covering
    ``center_fraction * h``; the remainder are drawn uniformly in conjugate
    pairs until ``round(h / r)`` rows are sampled.
    """
    _check_rate(r, center_fraction)
    if r == 1:
        return SamplingMask(np.ones((h, w)), "cartesian", 1.0, center_fraction, seed)
    total = int(round(h / r))
    c = h // 2
    half = max(0, math.ceil((center_fraction * h - 1) / 2))
    center = [c + d for d in range(-half, half + 1) if 0 <= c + d < h]
    if total < len(center):
        raise InfeasibleRateError(f"R={r} keeps {total} of {h} rows, fewer than the {len(center)} central rows")

    rng = np.random.default_rng(seed)
    rows = set(center)
    # one representative per conjugate pair outside the centre; self-paired
    # rows (the Nyquist row for even h) are kept apart to fix parity
    reps = sorted({min(i, mirror_index(i, h)) for i in range(h) if i not in rows and mirror_index(i, h) != i})
    selfs = [i for i in range(h) if i not in rows and mirror_index(i, h) == i]
    need = total - len(rows)
    if need % 2 and selfs:
        rows.add(selfs[int(rng.integers(len(selfs)))])
        need -= 1
    picks = rng.choice(len(reps), size=min(need // 2, len(reps)), replace=False)
    for p in picks:
        rows.update((reps[p], mirror_index(reps[p], h)))

    grid = np.zeros((h, w))
    grid[sorted(rows), :] = 1.0
    return SamplingMask(grid, "cartesian", float(r), center_fraction, seed)


def make_gaussian_mask(h: int, w: int, r: float, center_fraction: float = 0.04, seed: int = 0) -> SamplingMask:
    """Central disc plus Gaussian-weighted random points (sigma = h/6, w/6).

    Points are drawn in conjugate pairs without replacement with probability
    proportional to the density (Gumbel top-k), until ``round(h * w / r)``
    samples are taken.
    """
    _check_rate(r, center_fraction)
    if r == 1:
        return SamplingMask(np.ones((h, w)), "gaussian", 1.0, center_fraction, seed)
    total = int(round(h * w / r))
    yy, xx = np.meshgrid(np.arange(h) - h // 2, np.arange(w) - w // 2, indexing="ij")
    radius2 = yy.astype(float) ** 2 + xx.astype(float) ** 2
    disc_r2 = center_fraction * h * w / math.pi
    grid = (radius2 <= disc_r2).astype(np.float64)
    if grid.sum() > total:
        raise InfeasibleRateError(f"R={r} keeps {total} samples, fewer than the {int(grid.sum())} in the central disc")

    iy, ix = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    my, mx = mirror_index(iy, h), mirror_index(ix, w)
    flat = iy * w + ix
    partner = my * w + mx
    free = grid.ravel() == 0
    is_self = (flat == partner).ravel() & free
    is_rep = (flat < partner).ravel() & free

    log_density = -(yy**2 / (2 * (h / 6) ** 2) + xx**2 / (2 * (w / 6) ** 2)).ravel()
    rng = np.random.default_rng(seed)
    need = total - int(grid.sum())
    out = grid.ravel().copy()
    selfs = np.flatnonzero(is_self)
    if need % 2 and selfs.size:
        keys = log_density[selfs] + rng.gumbel(size=selfs.size)
        out[selfs[np.argmax(keys)]] = 1.0
        need -= 1
    reps = np.flatnonzero(is_rep)
    keys = log_density[reps] + rng.gumbel(size=reps.size)
    chosen = reps[np.argsort(-keys, kind="stable")[: need // 2]]
    out[chosen] = 1.0
    out[partner.ravel()[chosen]] = 1.0
    return SamplingMask(out.reshape(h, w), "gaussian", float(r), center_fraction, seed)


def make_mask(pattern: str, h: int, w: int, r: float, center_fraction: float | None = None, seed: int = 0) -> SamplingMask:
    if pattern not in PATTERN_CODES:
        raise ValueError(f"unknown mask pattern {pattern!r}")
    cf = DEFAULT_CENTER_FRACTION[pattern] if center_fraction is None else center_fraction
    maker = make_cartesian_mask if pattern == "cartesian" else make_gaussian_mask
    return maker(h, w, r, cf, seed)


def context_mask_seed(base_seed: int, ctx: AcquisitionContext) -> int:
    """Stable per-context mask seed (independent of study and encoding)."""
    ss = np.random.SeedSequence([int(base_seed), int(round(ctx.acceleration * 1000)), PATTERN_CODES[ctx.pattern]])
    return int(ss.generate_state(1)[0])


def mask_for_context(ctx: AcquisitionContext, h: int, w: int, base_seed: int = 0, center_fraction=None) -> SamplingMask:
    return make_mask(ctx.pattern, h, w, ctx.acceleration, center_fraction, context_mask_seed(base_seed, ctx))


def _mask_grid(mask) -> np.ndarray:
    return mask.grid if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=np.float64)


def undersample(image, mask) -> tuple[KSpaceGrid, Tensor]:
    """Retrospective undersampling: ``y = mask * F(image)``, ``x_u = Re F^H y``.

    ``image`` may carry leading batch axes; the mask broadcasts over them.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    grid = _mask_grid(mask)
    if arr.shape[-2:] != grid.shape:
        raise ShapeError(f"image {arr.shape[-2:]} and mask {grid.shape} sizes differ")
    k = fft2c(arr) * grid
    y = KSpaceGrid.from_complex(k, dtype=arr.dtype)
    x_u = ifft2c(k).real.astype(arr.dtype)
    return y, Tensor(x_u)
