"""JSON configuration files: schemas and validating loaders.

Three documents are recognised.  Keys mirror the in-memory config types.

* data config      -> :class:`macrecon.datagen.PhantomSpec` plus split counts
* train config     -> :class:`macrecon.training.TrainConfig` plus I/O paths
* experiment config -> :class:`ExperimentConfig`

``schema_for(kind)`` returns the JSON Schema used for validation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import jsonschema

from .datagen import STUDIES, PhantomSpec
from .errors import ConfigError
from .sampling import ENCODINGS, PATTERN_CODES, AcquisitionContext
from .training import TrainConfig

_NUM = {"type": "number"}
_OPT_NUM = {"type": ["number", "null"]}
_PRECISION = {"enum": ["float32", "float64"]}

CONTEXT_SCHEMA = {
    "type": "object",
    "properties": {
        "acceleration": {"type": "number", "minimum": 1},
        "pattern": {"enum": sorted(PATTERN_CODES)},
        "study": {"enum": list(STUDIES)},
        "encoding": {"enum": list(ENCODINGS)},
    },
    "required": ["acceleration"],
    "additionalProperties": False,
}

DATA_SCHEMA = {
    "type": "object",
    "properties": {
        "root": {"type": "string"},
        "size": {"type": "integer", "minimum": 11},
        "seed": {"type": "integer", "minimum": 0},
        "study": {"enum": list(STUDIES)},
        "n_ellipses": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "intensity": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "smoothing": {"type": "number", "minimum": 0},
        "counts": {
            "type": "object",
            "properties": {s: {"type": "integer", "minimum": 0} for s in ("train", "val", "test")},
            "additionalProperties": False,
        },
    },
    "required": ["root"],
    "additionalProperties": False,
}

_TRAIN_PROPS = {
    "epochs": {"type": "integer", "minimum": 0},
    "batch_size": {"type": "integer", "minimum": 1},
    "lr": {"type": "number", "minimum": 0},
    "seed": {"type": "integer", "minimum": 0},
    "precision": _PRECISION,
    "n_cascades": {"type": "integer", "minimum": 1, "maximum": 255},
    "channels": {"type": "integer", "minimum": 1},
    "mask_seed": {"type": "integer", "minimum": 0},
    "center_fraction": _OPT_NUM,
    "grad_clip": _OPT_NUM,
    "eval_batch_size": {"type": "integer", "minimum": 1},
}

TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        **_TRAIN_PROPS,
        "dataset": {"type": "string"},
        "datasets": {"type": "object", "additionalProperties": {"type": "string"}},
        "contexts": {"type": "array", "items": CONTEXT_SCHEMA, "minItems": 1},
        "stage": {"enum": [1, 2]},
        "mode": {"enum": ["mac", "static"]},
        "output_dir": {"type": "string"},
        "stage1_checkpoint": {"type": ["string", "null"]},
    },
    "required": ["contexts"],
    "additionalProperties": False,
}

EXPERIMENT_KINDS = ("fixed_study", "fixed_mask", "unseen_sweep")
MODELS = ("ZF", "CSM", "JCM", "MAC")

EXPERIMENT_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "kind": {"enum": list(EXPERIMENT_KINDS)},
        "accelerations": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 1},
        "patterns": {"type": "array", "items": {"enum": sorted(PATTERN_CODES)}, "minItems": 1},
        "studies": {"type": "array", "items": {"enum": list(STUDIES)}, "minItems": 1},
        "encoding": {"enum": [*ENCODINGS, None]},
        "roster": {"type": "array", "items": {"enum": list(MODELS)}, "minItems": 1, "uniqueItems": True},
        "datasets": {"type": "object", "additionalProperties": {"type": "string"}},
        "output_dir": {"type": "string"},
        "train_models": {"type": "boolean"},
        "n_artifact_images": {"type": "integer", "minimum": 0},
        "train": {
            "type": "object",
            "properties": {
                **{k: v for k, v in _TRAIN_PROPS.items() if k != "epochs"},
                "stage1_epochs": {"type": "integer", "minimum": 0},
                "stage2_epochs": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "start": _NUM,
                "stop": _NUM,
                "step": {"type": "number", "exclusiveMinimum": 0},
                "values": {"type": "array", "items": {"type": "number", "minimum": 1}},
            },
            "additionalProperties": False,
        },
    },
    "required": ["kind", "accelerations", "datasets", "output_dir"],
    "additionalProperties": False,
}

_SCHEMAS = {"data": DATA_SCHEMA, "train": TRAIN_SCHEMA, "experiment": EXPERIMENT_SCHEMA, "context": CONTEXT_SCHEMA}


def schema_for(kind: str) -> dict:
    return _SCHEMAS[kind]


def read_json(source) -> dict:
    if isinstance(source, dict):
        return dict(source)
    try:
        return json.loads(Path(source).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {source}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON ({exc})") from None


def validate(raw: dict, kind: str) -> dict:
    try:
        jsonschema.validate(raw, _SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{kind} config invalid at {where}: {exc.message}") from None
    return raw


def context_from_dict(d: dict, default_encoding: str = "pattern") -> AcquisitionContext:
    d = dict(d)
    d.setdefault("encoding", default_encoding)
    return AcquisitionContext(float(d.pop("acceleration")), **d)


def context_to_dict(ctx: AcquisitionContext) -> dict:
    return asdict(ctx)


# --- data -----------------------------------------------------------------


def load_data_config(source) -> tuple[PhantomSpec, dict[str, int], str]:
    raw = validate(read_json(source), "data")
    counts = raw.pop("counts", {"train": 100, "val": 20, "test": 20})
    root = raw.pop("root")
    for key in ("n_ellipses", "intensity"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return PhantomSpec(**raw), counts, root
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# --- train ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainJob:
    train: TrainConfig
    datasets: dict[str, str]
    output_dir: str | None = None
    stage1_checkpoint: str | None = None


def load_train_config(source, overrides: dict | None = None) -> TrainJob:
    raw = read_json(source)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    validate(raw, "train")
    contexts = tuple(context_from_dict(c) for c in raw.pop("contexts"))
    datasets = dict(raw.pop("datasets", {}))
    if "dataset" in raw:
        path = raw.pop("dataset")
        for c in contexts:
            datasets.setdefault(c.study, path)
    output_dir = raw.pop("output_dir", None)
    stage1 = raw.pop("stage1_checkpoint", None)
    try:
        cfg = TrainConfig(contexts=contexts, **raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    missing = {c.study for c in contexts} - set(datasets)
    if missing:
        raise ConfigError(f"no dataset given for study/studies {sorted(missing)}")
    return TrainJob(cfg, datasets, output_dir, stage1)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["contexts"] = [context_to_dict(c) for c in cfg.contexts]
    return d


# --- experiment -----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentTrainSettings:
    stage1_epochs: int = 10
    stage2_epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    precision: str = "float32"
    n_cascades: int = 5
    channels: int = 32
    mask_seed: int = 0
    center_fraction: float | None = None
    grad_clip: float | None = None
    eval_batch_size: int = 8


_DEFAULT_ENCODING = {"fixed_study": "pattern", "fixed_mask": "study", "unseen_sweep": "r"}
PAPER_SWEEP_TRAINED = (2.0, 3.3, 4.0, 5.0, 8.0)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    accelerations: tuple[float, ...]
    datasets: dict[str, str]
    output_dir: str
    name: str = "experiment"
    patterns: tuple[str, ...] = ("gaussian",)
    studies: tuple[str, ...] = ("cardiac",)
    encoding: str | None = None
    roster: tuple[str, ...] = MODELS
    train_models: bool = True
    n_artifact_images: int = 2
    train: ExperimentTrainSettings = field(default_factory=ExperimentTrainSettings)
    sweep: dict = field(default_factory=lambda: {"start": 2.4, "stop": 7.6, "step": 0.2})

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.encoding is None:
            object.__setattr__(self, "encoding", _DEFAULT_ENCODING[self.kind])
        if self.kind == "unseen_sweep":
            if self.encoding != "r":
                raise ConfigError("unseen_sweep needs a one-element context (encoding 'r')")
            if len(self.patterns) != 1 or len(self.studies) != 1:
                raise ConfigError("unseen_sweep uses a single mask pattern and a single study")
        if self.kind == "fixed_study" and len(self.studies) != 1:
            raise ConfigError("fixed_study uses exactly one study")
        if self.kind == "fixed_mask" and len(self.patterns) != 1:
            raise ConfigError("fixed_mask uses exactly one mask pattern")
        contexts = self.contexts()
        if self.encoding == "r" and len({(c.pattern, c.study) for c in contexts}) > 1:
            raise ConfigError("encoding 'r' cannot distinguish several patterns or studies")
        missing = set(self.studies) - set(self.datasets)
        if missing:
            raise ConfigError(f"no dataset given for study/studies {sorted(missing)}")

    def contexts(self) -> list[AcquisitionContext]:
        return [
            AcquisitionContext(float(r), p, s, self.encoding)
            for s in self.studies
            for p in self.patterns
            for r in self.accelerations
        ]

    def sweep_values(self) -> list[float]:
        if "values" in self.sweep:
            return [float(v) for v in self.sweep["values"]]
        start, stop, step = float(self.sweep["start"]), float(self.sweep["stop"]), float(self.sweep["step"])
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(n)]

    def train_config(self, contexts, mode: str) -> TrainConfig:
        t = asdict(self.train)
        t.pop("stage1_epochs")
        t.pop("stage2_epochs")
        return TrainConfig(contexts=tuple(contexts), mode=mode, epochs=self.train.stage2_epochs, **t)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["accelerations"] = list(self.accelerations)
        d["patterns"] = list(self.patterns)
        d["studies"] = list(self.studies)
        d["roster"] = list(self.roster)
        return d


def load_experiment_config(source) -> ExperimentConfig:
    raw = validate(read_json(source), "experiment")
    raw["train"] = ExperimentTrainSettings(**raw.get("train", {}))
    for key in ("accelerations", "patterns", "studies", "roster"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return ExperimentConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
