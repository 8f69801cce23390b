"""Command-line entry point: ``macrecon <subcommand> ...``.

Failures print one JSON error record on stderr and exit non-zero
(2 for usage / config errors, 1 for everything else).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import mact
from .config import (
    load_data_config,
    load_experiment_config,
    load_train_config,
    train_config_to_dict,
)
from .datagen import build_dataset, load_dataset
from .errors import ConfigError, MacReconError, PreconditionError, TrainingDivergedError
from .fourier import KSpaceGrid
from .harness import run_experiment, run_unseen_sweep
from .model import load_checkpoint, model_forward, save_checkpoint
from .sampling import (
    PATTERN_CODES,
    STUDY_CODES,
    AcquisitionContext,
    SamplingMask,
    encode_context,
    make_mask,
    undersample,
)
from .training import build_pairs, save_result, train_stage1, train_stage2

log = logging.getLogger("macrecon")


class UsageError(MacReconError):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_frozen(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.frozen.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(args) -> int:
    spec, counts, root = load_data_config(args.config)
    manifest = build_dataset(spec, counts, root)
    _write_frozen(Path(root), {"phantom": asdict(spec), "counts": counts, "root": root})
    print(json.dumps({"root": str(manifest.root), "counts": manifest.counts, "size": manifest.size}))
    return 0


def cmd_gen_mask(args) -> int:
    mask = make_mask(args.pattern, args.height, args.width or args.height, args.accel, args.center_fraction, args.seed)
    mask.save(args.out)
    print(json.dumps({**mask.metadata(), "achieved_R": mask.achieved_acceleration, "path": args.out}))
    return 0


def cmd_undersample(args) -> int:
    image = _load_image(args.image)
    mask = SamplingMask.load(args.mask)
    y, x_u = undersample(image, mask)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    y.save(out / "kspace.mact")
    mact.save(out / "zero_filled.mact", x_u.data)
    return 0


def _load_image(path) -> np.ndarray:
    arr = mact.load(path)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ConfigError(f"{path}: expected a 2-D image, got shape {arr.shape}")
    return arr


def cmd_train(args) -> int:
    job = load_train_config(args.config, {"stage": args.stage, "mode": args.mode, "output_dir": args.out})
    cfg = job.train
    if job.output_dir is None:
        raise ConfigError("train needs an output directory (--out or output_dir)")
    out = Path(job.output_dir)
    stage1 = None
    if cfg.stage == 2:
        ckpt = args.stage1_checkpoint or job.stage1_checkpoint
        if not ckpt or not Path(ckpt).exists():
            raise PreconditionError(f"stage 2 needs a stage-1 checkpoint; none found at {ckpt!r}")
        stage1 = load_checkpoint(ckpt, mode=cfg.mode)

    images = {"train": {}, "val": {}}
    for study, root in job.datasets.items():
        _, splits = load_dataset(root)
        images["train"][study] = splits["train"]
        images["val"][study] = splits["val"]
    kw = dict(mask_seed=cfg.mask_seed, center_fraction=cfg.center_fraction, precision=cfg.precision)
    train = build_pairs(images["train"], cfg.contexts, **kw)
    val = build_pairs(images["val"], cfg.contexts, **kw)
    _write_frozen(out, {**train_config_to_dict(cfg), "datasets": job.datasets, "stage1_checkpoint": args.stage1_checkpoint or job.stage1_checkpoint})
    try:
        result = train_stage1(train, val, cfg) if cfg.stage == 1 else train_stage2(stage1, train, val, cfg)
    except TrainingDivergedError as exc:
        if exc.last_good is not None:
            out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(exc.last_good, out / "last_good.macr")
        raise
    save_result(result, out)
    print(json.dumps({"output_dir": str(out), "epochs": result.record.epochs, "best_epoch": result.best_epoch}))
    return 0


def cmd_reconstruct(args) -> int:
    model = load_checkpoint(args.checkpoint)
    mask = SamplingMask.load(args.mask)
    if args.kspace:
        y = KSpaceGrid.load(args.kspace)
        x_u = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(y.complex()), norm="ortho")).real
    elif args.image:
        y, xu = undersample(_load_image(args.image), mask)
        x_u = xu.data
    else:
        raise UsageError("reconstruct needs --image or --kspace")
    dtype = model.config.dtype
    h, w = x_u.shape[-2:]
    x_u = x_u.reshape(1, 1, h, w).astype(dtype)
    y = KSpaceGrid(y.re.reshape(1, 1, h, w), y.im.reshape(1, 1, h, w)).astype(dtype)
    gamma = None
    if model.config.mode == "mac":
        if args.accel is None:
            raise UsageError("a MAC checkpoint needs --accel")
        encoding = "r" if model.config.n_context == 1 else ("study" if args.study_code else "pattern")
        ctx = AcquisitionContext(
            args.accel,
            pattern={v: k for k, v in PATTERN_CODES.items()}[args.pattern_code or 2],
            study={v: k for k, v in STUDY_CODES.items()}[args.study_code or 1],
            encoding=encoding,
        )
        gamma = encode_context(ctx, dtype)
    out = model_forward(model, gamma, x_u, y, mask)
    mact.save(args.out, out.data[0, 0])
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_experiment_config(args.config)
    if args.no_train:
        cfg = replace(cfg, train_models=False)
    result = run_experiment(cfg)
    print((result.output_dir / "results.csv").read_text(), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_experiment_config(args.config)
    if args.no_train:
        cfg = replace(cfg, train_models=False)
    result = run_unseen_sweep(cfg)
    print(json.dumps({"evaluated": result.evaluated, "excluded": result.excluded, "n_evaluated": len(result.evaluated)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="macrecon", description="Context-conditioned undersampled MRI reconstruction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="generate a phantom dataset")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("gen-mask", help="generate an undersampling mask")
    s.add_argument("--pattern", choices=sorted(PATTERN_CODES), required=True)
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--width", type=int)
    s.add_argument("--accel", type=float, required=True)
    s.add_argument("--center-fraction", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_mask)

    s = sub.add_parser("undersample", help="retrospectively undersample one image")
    s.add_argument("--image", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_undersample)

    s = sub.add_parser("train", help="run one training stage")
    s.add_argument("--config", required=True)
    s.add_argument("--stage", type=int, choices=(1, 2))
    s.add_argument("--mode", choices=("mac", "static"))
    s.add_argument("--stage1-checkpoint")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="reconstruct a single image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--image")
    s.add_argument("--kspace")
    s.add_argument("--accel", type=float)
    s.add_argument("--pattern-code", type=int, choices=(1, 2))
    s.add_argument("--study-code", type=int, choices=(1, 2))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    for name, func, help_ in (("evaluate", cmd_evaluate, "run an experiment"), ("sweep", cmd_sweep, "unseen-acceleration sweep")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True)
        s.add_argument("--no-train", action="store_true", help="load checkpoints instead of training")
        s.set_defaults(func=func)
    return p


def cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(json.dumps(exc.record()), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(json.dumps(exc.record()), file=sys.stderr)
        return 2
    except MacReconError as exc:
        print(json.dumps(exc.record()), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": "failure", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())
