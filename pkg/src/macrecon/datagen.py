"""Synthetic ellipse phantoms and the on-disk dataset layout.

Layout::

    root/manifest.json
    root/{train,val,test}/img_00000.mact   # (1, H, W) float64 in [0, 1]

Two phantom studies are available.  ``cardiac`` phantoms are a torso
ellipse with elongated, freely rotated structures; ``brain`` phantoms are
nested, nearly concentric ellipses (skull ring, parenchyma, ventricles).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import mact
from .errors import DatasetError

SPLITS = ("train", "val", "test")
STUDIES = ("cardiac", "brain")


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    n_ellipses: tuple[int, int] = (4, 10)
    intensity: tuple[float, float] = (0.2, 1.0)
    smoothing: float = 0.8
    seed: int = 0
    study: str = "cardiac"

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown phantom study {self.study!r}")
        if self.size < 1:
            raise ValueError("phantom size must be positive")


def _ellipse(yy, xx, cy, cx, ay, ax, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def gen_phantom(spec: PhantomSpec, index: int) -> np.ndarray:
    """One phantom, a pure function of ``(spec, index)``; values in [0, 1], max 1."""
    rng = np.random.default_rng([spec.seed, index, STUDIES.index(spec.study)])
    n = spec.size
    coords = (np.arange(n) - (n - 1) / 2) / (n / 2)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    lo, hi = spec.intensity
    count = int(rng.integers(spec.n_ellipses[0], spec.n_ellipses[1] + 1))
    img = np.zeros((n, n))

    if spec.study == "cardiac":
        # body outline, then elongated structures anywhere inside it
        ay, ax = rng.uniform(0.55, 0.75), rng.uniform(0.75, 0.92)
        img[_ellipse(yy, xx, 0, 0, ay, ax, rng.uniform(-0.3, 0.3))] += rng.uniform(lo, 0.5)
        for _ in range(count - 1):
            major = rng.uniform(0.08, 0.4)
            minor = major * rng.uniform(0.25, 0.7)
            cy, cx = rng.uniform(-0.5, 0.5) * ay, rng.uniform(-0.6, 0.6) * ax
            sign = -1.0 if rng.random() < 0.2 else 1.0
            img[_ellipse(yy, xx, cy, cx, minor, major, rng.uniform(0, np.pi))] += sign * rng.uniform(lo, hi) * 0.6
    else:
        # skull ring, parenchyma, then small near-central blobs
        ay, ax = rng.uniform(0.8, 0.92), rng.uniform(0.65, 0.78)
        img[_ellipse(yy, xx, 0, 0, ay, ax, 0.0)] += rng.uniform(0.7, hi)
        img[_ellipse(yy, xx, 0, 0, ay - 0.07, ax - 0.07, 0.0)] -= rng.uniform(0.3, 0.5)
        for _ in range(count - 2):
            r = rng.uniform(0.05, 0.3)
            cy, cx = rng.normal(0, 0.15), rng.normal(0, 0.1)
            img[_ellipse(yy, xx, cy, cx, r * rng.uniform(0.8, 1.6), r, rng.normal(0, 0.2))] += rng.uniform(-lo, hi) * 0.5

    if spec.smoothing > 0:
        img = gaussian_filter(img, spec.smoothing, mode="constant")
    img = np.clip(img, 0.0, 1.0)
    return normalize_max(img)


def normalize_max(img: np.ndarray) -> np.ndarray:
    """Magnitude image scaled to [0, 1] by its maximum."""
    img = np.abs(np.asarray(img, dtype=np.float64))
    peak = img.max()
    return img / peak if peak > 0 else img


def ingest_image(path, size: int | None = None) -> np.ndarray:
    """Load an external MACT image ``(H, W)`` or ``(1, H, W)`` and max-normalize it."""
    arr = mact.load(path)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise DatasetError(f"{path}: expected a single 2-D image, got shape {arr.shape}")
    if size is not None and arr.shape != (size, size):
        raise DatasetError(f"{path}: expected {size}x{size}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise DatasetError(f"{path}: image contains NaN or Inf")
    return normalize_max(arr)


@dataclass
class DatasetManifest:
    root: Path
    size: int
    counts: dict[str, int]
    seed: int
    study_tag: str
    normalization: str = "max"
    seeds: dict[str, list[list[int]]] = field(default_factory=dict)

    def path(self, split: str, i: int) -> Path:
        return self.root / split / f"img_{i:05d}.mact"

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("root")
        return d


def _split_indices(counts: dict[str, int]) -> dict[str, range]:
    out, start = {}, 0
    for split in SPLITS:
        out[split] = range(start, start + counts.get(split, 0))
        start += counts.get(split, 0)
    return out


def write_dataset(root, images: dict[str, list[np.ndarray]], *, seed: int, study_tag: str, seeds=None) -> DatasetManifest:
    """Write already-normalized images per split and the manifest."""
    root = Path(root)
    sizes = {img.shape for split in images.values() for img in split}
    if len(sizes) != 1:
        raise DatasetError(f"all images must share one square size, got {sizes}")
    (shape,) = sizes
    if shape[0] != shape[1]:
        raise DatasetError(f"images must be square, got {shape}")
    manifest = DatasetManifest(
        root=root,
        size=shape[0],
        counts={s: len(images.get(s, [])) for s in SPLITS},
        seed=seed,
        study_tag=study_tag,
        seeds=seeds or {},
    )
    for split in SPLITS:
        (root / split).mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(images.get(split, [])):
            mact.save(manifest.path(split, i), np.asarray(img, dtype=np.float64)[None])
    (root / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n")
    return manifest


def build_dataset(spec: PhantomSpec, counts: dict[str, int], root) -> DatasetManifest:
    """Generate phantoms for each split.  Splits use disjoint phantom indices."""
    for split, n in counts.items():
        if split not in SPLITS or n < 0:
            raise DatasetError(f"bad split count {split}={n}")
    ranges = _split_indices(counts)
    images = {split: [gen_phantom(spec, i) for i in idx] for split, idx in ranges.items()}
    seeds = {split: [[spec.seed, i] for i in idx] for split, idx in ranges.items()}
    return write_dataset(root, images, seed=spec.seed, study_tag=spec.study, seeds=seeds)


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    try:
        raw = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError:
        raise DatasetError(f"no manifest.json under {root}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"unreadable manifest in {root}: {exc}") from None
    try:
        return DatasetManifest(
            root=root,
            size=int(raw["size"]),
            counts={k: int(v) for k, v in raw["counts"].items()},
            seed=int(raw["seed"]),
            study_tag=raw["study_tag"],
            normalization=raw.get("normalization", "max"),
            seeds=raw.get("seeds", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed manifest in {root}: {exc}") from None


def load_dataset(root) -> tuple[DatasetManifest, dict[str, np.ndarray]]:
    """Manifest plus one ``(N, H, W)`` float64 array per split."""
    manifest = load_manifest(root)
    out = {}
    for split in SPLITS:
        n = manifest.counts.get(split, 0)
        arr = np.empty((n, manifest.size, manifest.size))
        for i in range(n):
            path = manifest.path(split, i)
            if not path.exists():
                raise DatasetError(f"missing dataset file {path}")
            img = mact.load(path)
            if img.shape != (1, manifest.size, manifest.size):
                raise DatasetError(f"{path}: shape {img.shape} does not match manifest size {manifest.size}")
            arr[i] = img[0]
        out[split] = arr
    return manifest, out
