"""Experiment orchestration: train or load the roster, evaluate, write tables.

Output directory layout::

    out/config.frozen.json      effective config and every seed
    out/models/mac.macr         one file for the MAC model
    out/models/jcm.macr
    out/models/csm_<ctx>.macr   one per context
    out/records/<model>_stage{1,2}.csv
    out/results.csv
    out/sweep.csv, out/sweep_results.csv       (unseen sweep only)
    out/recon/<ctx>/<model>_img00000.{mact,residual.mact,residual.pgm}
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mact
from .config import ExperimentConfig, context_to_dict
from .datagen import load_dataset
from .errors import PreconditionError
from .model import ReconModel, load_checkpoint, save_checkpoint
from .sampling import PATTERN_CODES, STUDY_CODES, AcquisitionContext, context_mask_seed
from .training import PairSet, build_pairs, evaluate_pairs, train_two_stage

log = logging.getLogger(__name__)

RESULT_FIELDS = (
    "experiment",
    "context_r",
    "context_code",
    "model",
    "psnr_mean",
    "psnr_std",
    "ssim_mean",
    "ssim_std",
    "n_images",
    "best",
    "second_best",
)
SWEEP_FIELDS = ("experiment", "image_id", "r", "model", "psnr", "ssim")


@dataclass
class ResultRow:
    context: AcquisitionContext
    model: str
    psnr: np.ndarray
    ssim: np.ndarray
    best: bool = False
    second_best: bool = False

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim))


def context_code(ctx: AcquisitionContext) -> int:
    return STUDY_CODES[ctx.study] if ctx.encoding == "study" else PATTERN_CODES[ctx.pattern]


@dataclass
class ResultTable:
    experiment: str
    rows: list[ResultRow] = field(default_factory=list)

    def add(self, ctx, model, psnr, ssim) -> None:
        if self.get(ctx, model) is not None:
            raise ValueError(f"duplicate result row for {ctx.label}/{model}")
        self.rows.append(ResultRow(ctx, model, np.asarray(psnr, float), np.asarray(ssim, float)))

    def get(self, ctx, model) -> ResultRow | None:
        for r in self.rows:
            if r.context == ctx and r.model == model:
                return r
        return None

    def contexts(self) -> list[AcquisitionContext]:
        seen = []
        for r in self.rows:
            if r.context not in seen:
                seen.append(r.context)
        return seen

    def rank(self) -> None:
        """Flag the best and second-best model per context by mean PSNR (ties: SSIM)."""
        for ctx in self.contexts():
            rows = [r for r in self.rows if r.context == ctx]
            for r in rows:
                r.best = r.second_best = False
            ordered = sorted(rows, key=lambda r: (-r.psnr_mean, -r.ssim_mean))
            if ordered:
                ordered[0].best = True
            if len(ordered) > 1:
                ordered[1].second_best = True

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in self.rows:
            w.writerow(
                [
                    self.experiment,
                    f"{r.context.acceleration:g}",
                    context_code(r.context),
                    r.model,
                    _fmt(r.psnr_mean),
                    _fmt(float(np.std(r.psnr))),
                    _fmt(r.ssim_mean),
                    _fmt(float(np.std(r.ssim))),
                    r.psnr.size,
                    int(r.best),
                    int(r.second_best),
                ]
            )
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


@contextmanager
def experiment_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PreconditionError(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM, min-max scaled."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros(img.shape, np.uint8) if hi <= lo else np.round((img - lo) / (hi - lo) * 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + scaled.tobytes())


# --- data and models ------------------------------------------------------


def _load_images(cfg: ExperimentConfig) -> dict[str, dict[str, np.ndarray]]:
    """split -> study -> (N, H, W)"""
    out: dict[str, dict[str, np.ndarray]] = {"train": {}, "val": {}, "test": {}}
    for study in cfg.studies:
        manifest, splits = load_dataset(cfg.datasets[study])
        if manifest.study_tag != study:
            log.warning("dataset %s is tagged %r, used as %r", cfg.datasets[study], manifest.study_tag, study)
        for split, arr in splits.items():
            out[split][study] = arr
    return out


def _pairs(images, contexts, cfg: ExperimentConfig) -> list[PairSet]:
    t = cfg.train
    return build_pairs(images, contexts, mask_seed=t.mask_seed, center_fraction=t.center_fraction, precision=t.precision)


def _model_files(cfg: ExperimentConfig, contexts) -> dict[str, Path]:
    models = Path(cfg.output_dir) / "models"
    files = {}
    if "MAC" in cfg.roster:
        files["MAC"] = models / "mac.macr"
    if "JCM" in cfg.roster:
        files["JCM"] = models / "jcm.macr"
    if "CSM" in cfg.roster:
        for ctx in contexts:
            files[f"CSM:{ctx.label}"] = models / f"csm_{ctx.label}.macr"
    return files


def _train(cfg: ExperimentConfig, key: str, contexts, data) -> ReconModel:
    mode = "mac" if key == "MAC" else "static"
    tcfg = cfg.train_config(contexts, mode)
    train = _pairs(data["train"], contexts, cfg)
    val = _pairs(data["val"], contexts, cfg)
    log.info("training %s on %d context(s)", key, len(contexts))
    s1, s2 = train_two_stage(train, val, tcfg, cfg.train.stage1_epochs, cfg.train.stage2_epochs)
    records = Path(cfg.output_dir) / "records"
    records.mkdir(parents=True, exist_ok=True)
    stem = key.lower().replace(":", "_")
    s1.record.to_csv(records / f"{stem}_stage1.csv")
    s2.record.to_csv(records / f"{stem}_stage2.csv")
    return s2.best_model


def obtain_models(cfg: ExperimentConfig, contexts, data) -> dict[str, ReconModel]:
    """Train (or load) every roster model.  CSM keys are ``"CSM:<context label>"``."""
    files = _model_files(cfg, contexts)
    by_label = {c.label: c for c in contexts}
    models = {}
    for key, path in files.items():
        if path.exists() and not cfg.train_models:
            models[key] = load_checkpoint(path, mode="mac" if key == "MAC" else "static")
            continue
        if not cfg.train_models:
            raise PreconditionError(f"no checkpoint for {key} at {path} and training is disabled")
        ctxs = [by_label[key.split(":", 1)[1]]] if key.startswith("CSM:") else contexts
        models[key] = _train(cfg, key, ctxs, data)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(models[key], path)
    return models


def _model_for(models, name: str, ctx: AcquisitionContext):
    return models.get(f"CSM:{ctx.label}") if name == "CSM" else models.get(name)


def _evaluate(cfg, table, models, pairs: PairSet, roster, artifacts: Path | None, per_image=None):
    from .metrics import psnr, ssim

    ctx = pairs.context
    for name in roster:
        if name == "ZF":
            pred = pairs.x_u
            ps = np.array([psnr(p[0], t[0]) for p, t in zip(pred, pairs.x_t)])
            ss = np.array([ssim(p[0], t[0]) for p, t in zip(pred, pairs.x_t)])
        else:
            model = _model_for(models, name, ctx)
            if model is None:
                continue
            ev = evaluate_pairs(model, pairs, cfg.train.eval_batch_size)
            pred, ps, ss = ev["pred"], ev["psnr"], ev["ssim"]
        table.add(ctx, name, ps, ss)
        if per_image is not None:
            per_image.extend((i, ctx.acceleration, name, p, s) for i, (p, s) in enumerate(zip(ps, ss)))
        if artifacts is not None:
            d = artifacts / ctx.label
            d.mkdir(parents=True, exist_ok=True)
            for i in range(min(cfg.n_artifact_images, len(pairs))):
                stem = d / f"{name}_img{i:05d}"
                residual = np.abs(pred[i, 0] - pairs.x_t[i, 0])
                mact.save(f"{stem}.mact", pred[i, 0])
                mact.save(f"{stem}.residual.mact", residual)
                write_pgm(f"{stem}.residual.pgm", residual)


def _freeze(cfg: ExperimentConfig, contexts, extra=None) -> None:
    frozen = cfg.to_dict()
    frozen["contexts"] = [context_to_dict(c) for c in contexts]
    frozen["seeds"] = {
        "train": cfg.train.seed,
        "mask_base": cfg.train.mask_seed,
        "masks": {c.label: context_mask_seed(cfg.train.mask_seed, c) for c in contexts},
    }
    if extra:
        frozen.update(extra)
    path = Path(cfg.output_dir) / "config.frozen.json"
    path.write_text(json.dumps(frozen, indent=2, sort_keys=True) + "\n")


# --- entry points ---------------------------------------------------------


@dataclass
class ExperimentOutput:
    table: ResultTable
    models: dict[str, ReconModel]
    output_dir: Path


def run_experiment(cfg: ExperimentConfig) -> ExperimentOutput:
    out = Path(cfg.output_dir)
    contexts = cfg.contexts()
    with experiment_lock(out):
        _freeze(cfg, contexts)
        data = _load_images(cfg)
        models = obtain_models(cfg, contexts, data)
        table = ResultTable(cfg.name)
        for pairs in _pairs(data["test"], contexts, cfg):
            _evaluate(cfg, table, models, pairs, cfg.roster, out / "recon")
        table.rank()
        (out / "results.csv").write_text(table.to_csv())
    return ExperimentOutput(table, models, out)


@dataclass
class SweepOutput:
    table: ResultTable
    evaluated: list[float]
    excluded: list[float]
    per_image: list[tuple]


def run_unseen_sweep(cfg: ExperimentConfig) -> SweepOutput:
    """Evaluate MAC (gamma = [R]) and JCM at accelerations not seen in training."""
    if cfg.kind != "unseen_sweep":
        raise PreconditionError("run_unseen_sweep needs an unseen_sweep experiment config")
    out = Path(cfg.output_dir)
    trained = cfg.contexts()
    trained_r = [c.acceleration for c in trained]
    grid = cfg.sweep_values()
    excluded = [r for r in grid if any(abs(r - t) < 1e-9 for t in trained_r)]
    evaluated = [r for r in grid if r not in excluded]
    if excluded:
        log.info("sweep: skipping trained accelerations %s", excluded)
    log.info("sweep: %d grid points, %d unseen contexts evaluated", len(grid), len(evaluated))
    roster = [m for m in cfg.roster if m in ("ZF", "JCM", "MAC")]
    base = trained[0]
    unseen = [AcquisitionContext(r, base.pattern, base.study, "r") for r in evaluated]

    with experiment_lock(out):
        _freeze(cfg, trained, {"sweep_evaluated": evaluated, "sweep_excluded": excluded})
        data = _load_images(cfg)
        sub = ExperimentConfig(**{**cfg.__dict__, "roster": tuple(m for m in cfg.roster if m in ("JCM", "MAC"))})
        models = obtain_models(sub, trained, data)
        table = ResultTable(cfg.name)
        per_image: list[tuple] = []
        for pairs in _pairs(data["test"], unseen, cfg):
            _evaluate(cfg, table, models, pairs, roster, out / "recon", per_image)
        table.rank()
        (out / "sweep_results.csv").write_text(table.to_csv())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for i, r, name, p, s in per_image:
            w.writerow([cfg.name, i, f"{r:g}", name, _fmt(float(p)), _fmt(float(s))])
        (out / "sweep.csv").write_text(buf.getvalue())
    return SweepOutput(table, evaluated, excluded, per_image)
