"""Two-stage training.

Stage 1 trains a single functional unit.  Stage 2 stacks copies of that unit
into the full cascade and trains every block end to end on the final-output
L2 loss.  The same loop trains ``static`` models for the baselines.

An epoch visits every training image once.  Images are shuffled per epoch,
cut into batches, and consecutive batches cycle through the contexts, so
each batch carries exactly one context (and therefore one kernel set).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .autodiff import Tensor, l2_loss
from .errors import NonFiniteError, PreconditionError, ShapeError, TrainingDivergedError
from .fourier import KSpaceGrid
from .metrics import psnr, ssim
from .model import ModelConfig, ReconModel, save_checkpoint
from .optim import AdamState, adam_step
from .sampling import AcquisitionContext, SamplingMask, encode_context, mask_for_context, undersample

log = logging.getLogger(__name__)

PAPER_EPOCHS = 150


@dataclass(frozen=True)
class TrainConfig:
    contexts: tuple[AcquisitionContext, ...]
    epochs: int = PAPER_EPOCHS
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    stage: int = 1
    mode: str = "mac"
    n_cascades: int = 5
    channels: int = 32
    precision: str = "float64"
    mask_seed: int = 0
    center_fraction: float | None = None
    grad_clip: float | None = None
    eval_batch_size: int = 8

    def __post_init__(self):
        if not self.contexts:
            raise ValueError("at least one training context is required")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        encodings = {c.encoding for c in self.contexts}
        if len(encodings) != 1:
            raise ValueError(f"all contexts must share one encoding, got {sorted(encodings)}")

    @property
    def n_context(self) -> int:
        return self.contexts[0].n_context

    def model_config(self, n_cascades: int | None = None) -> ModelConfig:
        return ModelConfig(
            mode=self.mode,
            n_cascades=self.n_cascades if n_cascades is None else n_cascades,
            n_context=self.n_context,
            channels=self.channels,
            precision=self.precision,
        )


@dataclass
class PairSet:
    """Every ``(x_u, y, mask, gamma, x_t)`` tuple for one context."""

    context: AcquisitionContext
    mask: SamplingMask
    gamma: Tensor
    x_t: np.ndarray  # (N, 1, H, W)
    x_u: np.ndarray
    y: KSpaceGrid

    def __len__(self) -> int:
        return self.x_t.shape[0]


def build_pairs(
    images: Mapping[str, np.ndarray] | np.ndarray,
    contexts: Sequence[AcquisitionContext],
    *,
    mask_seed: int = 0,
    center_fraction: float | None = None,
    precision: str = "float64",
) -> list[PairSet]:
    """Retrospectively undersample ``images`` (per study, ``(N, H, W)``) for each context.

    Each context uses one fixed mask derived from ``mask_seed`` and the context.
    """
    if isinstance(images, np.ndarray):
        images = {c.study: images for c in contexts}
    out = []
    for ctx in contexts:
        if ctx.study not in images:
            raise PreconditionError(f"no images for study {ctx.study!r}")
        arr = np.asarray(images[ctx.study], dtype=precision)
        if arr.ndim != 3:
            raise ShapeError(f"expected (N, H, W) images, got {arr.shape}")
        h, w = arr.shape[1:]
        mask = mask_for_context(ctx, h, w, mask_seed, center_fraction)
        x_t = arr[:, None]
        y, x_u = undersample(x_t, mask)
        out.append(PairSet(ctx, mask, encode_context(ctx, precision), x_t, x_u.data, y))
    return out


def make_batches(
    pairs: Sequence[PairSet] | Sequence[int],
    contexts: Sequence[AcquisitionContext] | None,
    batch_size: int,
    seed: int,
    epoch: int = 0,
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(context index, image indices)`` for one epoch.

    Contexts sharing a study share an image pool; each pool is shuffled with
    an epoch-indexed seed, chunked, and its chunks handed to that study's
    contexts in turn.  Pools are then interleaved batch by batch.
    """
    if contexts is None:
        contexts = [p.context for p in pairs]
    sizes = [len(p) if isinstance(p, PairSet) else int(p) for p in pairs]
    groups: dict[str, list[int]] = {}
    for i, ctx in enumerate(contexts):
        groups.setdefault(ctx.study, []).append(i)

    streams = []
    for g, members in enumerate(groups.values()):
        n = sizes[members[0]]
        rng = np.random.default_rng([seed, epoch, g])
        order = rng.permutation(n)
        chunks = [order[s : s + batch_size] for s in range(0, n, batch_size)]
        streams.append([(members[j % len(members)], chunk) for j, chunk in enumerate(chunks)])

    for j in range(max((len(s) for s in streams), default=0)):
        for s in streams:
            if j < len(s):
                yield s[j]


@dataclass
class TrainRecord:
    seed: int
    stage: int
    rows: list[dict] = field(default_factory=list)

    FIELDS = ("epoch", "split", "context", "loss", "psnr", "ssim", "seconds")

    @property
    def epochs(self) -> int:
        return sum(1 for r in self.rows if r["split"] == "train")

    def losses(self, split: str) -> list[float]:
        return [r["loss"] for r in self.rows if r["split"] == split and r["context"] == "all"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in self.FIELDS})


@dataclass
class TrainResult:
    model: ReconModel
    best_model: ReconModel
    record: TrainRecord
    best_epoch: int = 0
    batch_losses: list[list[float]] = field(default_factory=list)


def predict(model: ReconModel, pairs: PairSet, batch_size: int = 8) -> np.ndarray:
    """Reconstruct every image of ``pairs`` without recording a graph."""
    model = model if model.config.precision == str(pairs.x_t.dtype) else model.astype(str(pairs.x_t.dtype))
    out = np.empty_like(pairs.x_t)
    gamma = pairs.gamma if model.config.mode == "mac" else None
    for s in range(0, len(pairs), batch_size):
        sl = slice(s, s + batch_size)
        out[sl] = model(pairs.x_u[sl], pairs.y[sl], pairs.mask, gamma).data
    return out


def evaluate_pairs(model: ReconModel, pairs: PairSet, batch_size: int = 8) -> dict:
    pred = predict(model, pairs, batch_size)
    losses = np.sum((pred - pairs.x_t).astype(np.float64) ** 2, axis=(1, 2, 3))
    ps = [psnr(p[0], t[0]) for p, t in zip(pred, pairs.x_t)]
    ss = [ssim(p[0], t[0]) for p, t in zip(pred, pairs.x_t)]
    return {"pred": pred, "loss": losses, "psnr": np.array(ps), "ssim": np.array(ss)}


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(np.asarray(g, dtype=np.float64) ** 2)) for g in grads))
    if norm <= max_norm:
        return grads
    return [g * (max_norm / norm) for g in grads]


def fit(model: ReconModel, train: Sequence[PairSet], val: Sequence[PairSet], config: TrainConfig) -> TrainResult:
    """Adam on the batch-mean L2 loss; validation after every epoch."""
    record = TrainRecord(seed=config.seed, stage=config.stage)
    names = list(model.params)
    state = AdamState(lr=config.lr)
    best, best_loss, best_epoch = model, math.inf, 0
    all_batch_losses = []

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for ci, idx in make_batches(train, None, config.batch_size, config.seed, epoch):
            pairs = train[ci]
            params = {k: Tensor(v.data, requires_grad=True) for k, v in model.params.items()}
            gamma = pairs.gamma if config.mode == "mac" else None
            try:
                pred = model.with_params(params)(pairs.x_u[idx], pairs.y[idx], pairs.mask, gamma)
                loss = l2_loss(pred, pairs.x_t[idx])
                loss.backward()
                grads = [params[k].grad for k in names]
                if config.grad_clip is not None:
                    grads = _clip(grads, config.grad_clip)
                new, state = adam_step([model.params[k] for k in names], grads, state)
            except NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"stage {config.stage}, epoch {epoch}, context {pairs.context.label}: {exc}", last_good=model
                ) from exc
            model = model.with_params(dict(zip(names, new)))
            losses.append(loss.item())
        train_loss = float(np.mean(losses)) if losses else math.nan
        all_batch_losses.append(losses)
        seconds = time.perf_counter() - t0
        record.rows.append(
            {"epoch": epoch, "split": "train", "context": "all", "loss": train_loss, "psnr": "", "ssim": "", "seconds": seconds}
        )

        val_losses = []
        for pairs in val:
            ev = evaluate_pairs(model, pairs, config.eval_batch_size)
            val_losses.append(ev["loss"])
            record.rows.append(
                {
                    "epoch": epoch,
                    "split": "val",
                    "context": pairs.context.label,
                    "loss": float(np.mean(ev["loss"])),
                    "psnr": float(np.mean(ev["psnr"])),
                    "ssim": float(np.mean(ev["ssim"])),
                    "seconds": "",
                }
            )
        val_loss = float(np.mean(np.concatenate(val_losses))) if val_losses else math.nan
        record.rows.append(
            {"epoch": epoch, "split": "val", "context": "all", "loss": val_loss, "psnr": "", "ssim": "", "seconds": time.perf_counter() - t0}
        )
        log.info("stage %d epoch %d: train %.5g val %.5g (%.1fs)", config.stage, epoch, train_loss, val_loss, seconds)
        if val_loss < best_loss:
            best, best_loss, best_epoch = model, val_loss, epoch

    return TrainResult(model=model, best_model=best, record=record, best_epoch=best_epoch, batch_losses=all_batch_losses)


def train_stage1(train: Sequence[PairSet], val: Sequence[PairSet], config: TrainConfig) -> TrainResult:
    """Train one functional unit (a single-cascade model)."""
    config = replace(config, stage=1)
    model = ReconModel.init(config.model_config(n_cascades=1), seed=config.seed)
    return fit(model, train, val, config)


def train_stage2(stage1: ReconModel, train: Sequence[PairSet], val: Sequence[PairSet], config: TrainConfig) -> TrainResult:
    """Seed every cascade from the stage-1 unit and train the full model."""
    if stage1 is None:
        raise PreconditionError("stage 2 needs a trained stage-1 unit")
    if stage1.config.n_cascades != 1:
        raise PreconditionError(f"stage-1 model must have one cascade, got {stage1.config.n_cascades}")
    if stage1.config.mode != config.mode:
        raise PreconditionError(f"stage-1 model is {stage1.config.mode}, stage 2 asked for {config.mode}")
    expected = config.model_config(n_cascades=1)
    if (stage1.config.channels, stage1.config.n_context) != (expected.channels, expected.n_context) and config.mode == "mac":
        raise PreconditionError("stage-1 unit does not match the stage-2 channel count or context length")
    config = replace(config, stage=2)
    model = ReconModel.from_unit(stage1.astype(config.precision), config.n_cascades)
    return fit(model, train, val, config)


def train_two_stage(train, val, config: TrainConfig, stage1_epochs: int, stage2_epochs: int) -> tuple[TrainResult, TrainResult]:
    s1 = train_stage1(train, val, replace(config, epochs=stage1_epochs))
    s2 = train_stage2(s1.best_model, train, val, replace(config, epochs=stage2_epochs))
    return s1, s2


def save_result(result: TrainResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out / "final.macr")
    save_checkpoint(result.best_model, out / "best.macr")
    result.record.to_csv(out / "record.csv")
