"""Cascaded reconstruction network with dynamic weight prediction.

A model is ``n_cascades`` functional units.  Each unit is a five-layer CNN
block with a residual connection followed by a hard k-space data-fidelity
(DF) projection.  In ``mac`` mode the convolution kernels of unit ``n`` are
produced by an affine map of the context vector, so the affine weights and
biases are the only trainable tensors.  ``static`` mode stores the kernels
directly and is used for the context-specific and joint baselines.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import mact
from .autodiff import Tensor, add, affine, apply_linear, conv2d, relu, reshape
from .errors import CheckpointError, ModeMismatchError, ShapeError
from .fourier import KSpaceGrid, fft2c, ifft2c
from .sampling import SamplingMask

MODES = ("mac", "static")
_MODE_CODES = {"mac": 1, "static": 2}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}
N_LAYERS = 5
CKPT_MAGIC = b"MACR"
CKPT_VERSION = 1


def layer_shapes(channels: int = 32, kernel_size: int = 3) -> list[tuple[int, int, int, int]]:
    """Filter shapes (N_out, N_in, k, k) of the five layers of one CNN block."""
    k = kernel_size
    return [(channels, 1, k, k)] + [(channels, channels, k, k)] * 3 + [(1, channels, k, k)]


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "mac"
    n_cascades: int = 5
    n_context: int = 2
    channels: int = 32
    kernel_size: int = 3
    precision: str = "float64"
    lam: float = math.inf

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_cascades < 1 or self.channels < 1:
            raise ValueError("n_cascades and channels must be positive")
        if self.mode == "mac" and self.n_context not in (1, 2):
            raise ValueError(f"context length must be 1 or 2, got {self.n_context}")
        if self.mode == "static":
            object.__setattr__(self, "n_context", 0)
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")

    @property
    def dtype(self):
        return np.dtype(self.precision)


def param_name(mode: str, cascade: int, layer: int, part: str = "weight") -> str:
    """Checkpoint entry name; ``cascade`` and ``layer`` are 0-based, names are 1-based.

    MAC: ``dwp/{n}/{i}/weight`` (affine matrix) and ``dwp/{n}/{i}/bias``.
    Static: ``static/{n}/{i}/kernel`` (``part`` is ignored).
    """
    if mode == "mac":
        return f"dwp/{cascade + 1}/{layer + 1}/{part}"
    return f"static/{cascade + 1}/{layer + 1}/kernel"


def param_names(config: ModelConfig) -> list[str]:
    names = []
    for n in range(config.n_cascades):
        for i in range(N_LAYERS):
            if config.mode == "mac":
                names += [param_name("mac", n, i, "weight"), param_name("mac", n, i, "bias")]
            else:
                names.append(param_name("static", n, i))
    return names


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    kshapes = layer_shapes(config.channels, config.kernel_size)
    for n in range(config.n_cascades):
        for i, ks in enumerate(kshapes):
            if config.mode == "mac":
                nw = int(np.prod(ks))
                shapes[param_name("mac", n, i, "weight")] = (nw, config.n_context)
                shapes[param_name("mac", n, i, "bias")] = (nw,)
            else:
                shapes[param_name("static", n, i)] = ks
    return shapes


class ReconModel:
    """Configuration plus a flat name -> Tensor parameter mapping."""

    def __init__(self, config: ModelConfig, params: Mapping[str, Tensor]):
        expected = param_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ShapeError(f"parameter names do not match config (missing {missing[:3]}, unexpected {extra[:3]})")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = {name: params[name] for name in param_names(config)}

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ReconModel":
        """Affine weights zero, biases (or static kernels) ~ U(-b, b), b = 1/sqrt(fan_in)."""
        rng = np.random.default_rng(seed)
        kshapes = layer_shapes(config.channels, config.kernel_size)
        params = {}
        for n in range(config.n_cascades):
            for i, ks in enumerate(kshapes):
                bound = 1.0 / math.sqrt(ks[1] * ks[2] * ks[3])
                draw = rng.uniform(-bound, bound, size=int(np.prod(ks))).astype(config.dtype)
                if config.mode == "mac":
                    params[param_name("mac", n, i, "weight")] = Tensor(np.zeros((draw.size, config.n_context), config.dtype))
                    params[param_name("mac", n, i, "bias")] = Tensor(draw)
                else:
                    params[param_name("static", n, i)] = Tensor(draw.reshape(ks))
        return cls(config, params)

    @classmethod
    def from_unit(cls, unit: "ReconModel", n_cascades: int) -> "ReconModel":
        """Stack ``n_cascades`` copies of a single-unit model."""
        if unit.config.n_cascades != 1:
            raise ShapeError("from_unit expects a single-cascade model")
        config = replace(unit.config, n_cascades=n_cascades)
        params = {}
        for name, t in unit.params.items():
            kind, _, layer, part = name.split("/")
            for n in range(n_cascades):
                params[f"{kind}/{n + 1}/{layer}/{part}"] = Tensor(t.data.copy())
        return cls(config, params)

    def with_params(self, params: Mapping[str, Tensor]) -> "ReconModel":
        return ReconModel(self.config, params)

    def astype(self, precision: str) -> "ReconModel":
        config = replace(self.config, precision=precision)
        return ReconModel(config, {k: Tensor(v.data.astype(precision)) for k, v in self.params.items()})

    def kernels(self, gamma, cascade: int) -> list[Tensor]:
        if self.config.mode == "mac":
            if gamma is None:
                raise ShapeError("a MAC model needs a context vector")
            return dwp_predict(self.params, gamma, cascade, self.config)
        return [self.params[param_name("static", cascade, i)] for i in range(N_LAYERS)]

    def __call__(self, x_u, y: KSpaceGrid, mask, gamma=None) -> Tensor:
        return model_forward(self, gamma, x_u, y, mask)


def _infer_block_size(params, mode: str, cascade: int = 0) -> tuple[int, int]:
    """(channels, kernel_size) from the sizes of the first two layers."""
    n0 = params[param_name(mode, cascade, 0, "bias")].data.size
    n1 = params[param_name(mode, cascade, 1, "bias")].data.size
    channels = n1 // n0
    kernel_size = int(round(math.sqrt(n0 // channels)))
    return channels, kernel_size


def dwp_predict(params: Mapping[str, Tensor], gamma, cascade: int, config: ModelConfig | None = None) -> list[Tensor]:
    """Kernels of one CNN block: ``W_i = W_fc_i @ gamma + B_fc_i`` reshaped to filter shape."""
    gamma = gamma if isinstance(gamma, Tensor) else Tensor(np.asarray(gamma, dtype=np.float64))
    if gamma.ndim != 1:
        raise ShapeError(f"context must be a vector, got shape {gamma.shape}")
    w0 = params[param_name("mac", cascade, 0, "weight")]
    if w0.shape[1] != gamma.shape[0]:
        raise ShapeError(f"context has length {gamma.shape[0]}, predictor expects {w0.shape[1]}")
    if config is None:
        channels, kernel_size = _infer_block_size(params, "mac", cascade)
        config = ModelConfig(n_context=gamma.shape[0], channels=channels, kernel_size=kernel_size)
    gamma = Tensor(gamma.data.astype(w0.dtype, copy=False))
    out = []
    for i, ks in enumerate(layer_shapes(config.channels, config.kernel_size)):
        flat = affine(gamma, params[param_name("mac", cascade, i, "weight")], params[param_name("mac", cascade, i, "bias")])
        out.append(reshape(flat, ks))
    return out


def cnn_block(x: Tensor, kernels) -> Tensor:
    """conv-ReLU x4, conv, plus the block input."""
    if len(kernels) != N_LAYERS:
        raise ShapeError(f"expected {N_LAYERS} kernels, got {len(kernels)}")
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"cnn_block expects (B, 1, H, W), got {x.shape}")
    h = x
    for k in kernels[:-1]:
        h = relu(conv2d(h, k))
    h = conv2d(h, kernels[-1])
    if h.shape != x.shape:
        raise ShapeError(f"last layer produced {h.shape}, block input is {x.shape}")
    return add(h, x)


def _mask_grid(mask) -> np.ndarray:
    return mask.grid if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=np.float64)


def df_apply(x_cnn: Tensor, y: KSpaceGrid, mask, lam: float = math.inf) -> Tensor:
    """Data fidelity: overwrite (or blend, for finite ``lam``) the sampled k-space of ``x_cnn``.

    The map is affine in ``x_cnn``; its linear part is the same projection with
    ``y = 0``, which is self-adjoint and serves as its own gradient.
    """
    grid = _mask_grid(mask)
    if x_cnn.shape[-2:] != grid.shape or y.shape[-2:] != grid.shape:
        raise ShapeError(f"image {x_cnn.shape[-2:]}, k-space {y.shape[-2:]} and mask {grid.shape} must agree")
    if y.shape != x_cnn.shape and y.shape != x_cnn.shape[-2:]:
        try:
            np.broadcast_shapes(y.shape, x_cnn.shape)
        except ValueError:
            raise ShapeError(f"k-space {y.shape} does not broadcast against image {x_cnn.shape}") from None
    dtype = x_cnn.dtype
    keep = 1.0 - grid if math.isinf(lam) else 1.0 - grid * (lam / (1.0 + lam))
    keep = keep.astype(dtype)
    scale = grid if math.isinf(lam) else grid * (lam / (1.0 + lam))
    measured = ifft2c(y.complex().astype(np.result_type(dtype, np.complex64)) * scale.astype(dtype)).real

    def project(a):
        return ifft2c(fft2c(a) * keep).real.astype(dtype, copy=False)

    return apply_linear(x_cnn, project, project, offset=measured.astype(dtype))


def model_forward(model: ReconModel, gamma, x_u, y: KSpaceGrid, mask) -> Tensor:
    x = x_u if isinstance(x_u, Tensor) else Tensor(x_u)
    if model.config.mode == "mac" and gamma is None:
        raise ShapeError("a MAC model needs a context vector")
    for n in range(model.config.n_cascades):
        x = df_apply(cnn_block(x, model.kernels(gamma, n)), y, mask, model.config.lam)
    return x


# --- checkpoints -----------------------------------------------------------


def checkpoint_bytes(model: ReconModel) -> bytes:
    cfg = model.config
    n_context = cfg.n_context if cfg.mode == "mac" else 0
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<BBBB", CKPT_VERSION, _MODE_CODES[cfg.mode], cfg.n_cascades, n_context))
    out.write(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(mact.encode(t.data))
    return out.getvalue()


def save_checkpoint(model: ReconModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path, mode: str | None = None) -> ReconModel:
    """Read a MACR file; ``mode`` (if given) must match the stored mode."""
    stream = io.BytesIO(Path(path).read_bytes())
    head = stream.read(12)
    if len(head) < 12:
        raise CheckpointError("truncated checkpoint header")
    if head[:4] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {head[:4]!r}")
    version, mode_code, n_cascades, n_context = struct.unpack("<BBBB", head[4:8])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if mode_code not in _CODE_MODES:
        raise CheckpointError(f"unknown model mode code {mode_code}")
    stored_mode = _CODE_MODES[mode_code]
    if mode is not None and mode != stored_mode:
        raise ModeMismatchError(f"checkpoint holds a {stored_mode} model, {mode} requested")
    (count,) = struct.unpack("<I", head[8:12])

    params = {}
    for _ in range(count):
        raw = stream.read(2)
        if len(raw) < 2:
            raise CheckpointError("truncated checkpoint entry")
        (nlen,) = struct.unpack("<H", raw)
        name_raw = stream.read(nlen)
        if len(name_raw) < nlen:
            raise CheckpointError("truncated checkpoint entry name")
        name = name_raw.decode("utf-8")
        try:
            params[name] = Tensor(mact.read_from(stream))
        except Exception as exc:
            raise CheckpointError(f"entry {name!r}: {exc}") from exc
    if stream.read(1):
        raise CheckpointError("trailing bytes after checkpoint entries")

    try:
        channels, kernel_size = _infer_block_size(params, stored_mode)
        precision = str(params[param_name(stored_mode, 0, 0, "bias")].dtype)
        config = ModelConfig(
            mode=stored_mode,
            n_cascades=n_cascades,
            n_context=n_context,
            channels=channels,
            kernel_size=kernel_size,
            precision=precision,
        )
    except (KeyError, ValueError, ZeroDivisionError) as exc:
        raise CheckpointError(f"checkpoint does not describe a {stored_mode} model: {exc}") from exc
    unknown = sorted(set(params) - set(param_shapes(config)))
    if unknown:
        raise CheckpointError(f"unknown tensor name(s) in checkpoint: {unknown[:3]}")
    try:
        return ReconModel(config, params)
    except ShapeError as exc:
        raise CheckpointError(str(exc)) from exc
