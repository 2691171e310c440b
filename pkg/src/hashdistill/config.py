"""Experiment configuration: one JSON document describing a whole run.

The document has four sections — ``train`` (optimization), ``data``
(synthetic recipe or file paths), ``eval`` (retrieval protocol), plus
``sweep``/``ablation`` knobs for the comparison subcommands — and an
``output_dir`` for artifacts. Sensible defaults make a minimal config
just ``{"output_dir": ...}``; command-line overrides use dotted paths
(``train.lambda1=0.3``) with JSON-literal values.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .data import SyntheticSpec
from .errors import InvalidConfigError
from .model import EncoderConfig
from .trainer import TrainConfig

ABLATION_VARIANTS = ("-sdh-bceq", "+sdh-bceq", "-sdh+bceq", "+sdh+bceq")

DEFAULT_HIDDEN_DIMS = (128,)


@dataclass(frozen=True)
class SyntheticDataSpec:
    """Synthetic dataset section; ``seed`` is independent of the train seed
    so model-seed sweeps keep the data fixed."""

    n_classes: int = 8
    dim: int = 64
    n_train: int = 800
    n_database: int = 1000
    n_query: int = 200
    spread: float = 0.1
    seed: int = 0
    cooccurrence: object = None

    def __post_init__(self):
        if self.seed < 0:
            raise InvalidConfigError(f"data seed must be non-negative, got {self.seed}")
        self.to_spec()  # delegate structural validation

    def to_spec(self):
        return SyntheticSpec(
            n_classes=self.n_classes,
            dim=self.dim,
            n_train=self.n_train,
            n_database=self.n_database,
            n_query=self.n_query,
            spread=self.spread,
            cooccurrence=self.cooccurrence,
        )


@dataclass(frozen=True)
class FileDataSpec:
    """Pre-materialized dataset: six table paths (features + labels per split)."""

    train_features: str
    train_labels: str
    database_features: str
    database_labels: str
    query_features: str
    query_labels: str

    def validate_paths(self):
        for f in fields(self):
            path = getattr(self, f.name)
            if not os.path.exists(path):
                raise InvalidConfigError(f"data.{f.name} path does not exist: {path}")


@dataclass(frozen=True)
class EvalSpec:
    """Retrieval protocol: mAP cut-off and the P@Top ranks."""

    m: int = 100
    top_ranks: tuple = (1, 5, 10, 20, 50, 100)

    def __post_init__(self):
        if self.m < 1:
            raise InvalidConfigError(f"eval m must be >= 1, got {self.m}")
        ranks = tuple(int(r) for r in self.top_ranks)
        if not ranks or any(r < 1 for r in ranks) or list(ranks) != sorted(set(ranks)):
            raise InvalidConfigError(
                f"top_ranks must be unique ascending positive ranks, got {self.top_ranks}"
            )
        object.__setattr__(self, "top_ranks", ranks)


@dataclass(frozen=True)
class SweepSpec:
    """Transform-intensity sweep: scales to visit and draws per query."""

    scales: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    repeats: int = 1

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        if not scales or any(not 0.0 <= s <= 1.0 for s in scales):
            raise InvalidConfigError(
                f"sweep scales must be a non-empty tuple within [0, 1], got {self.scales}"
            )
        object.__setattr__(self, "scales", scales)
        if self.repeats < 1:
            raise InvalidConfigError(f"sweep repeats must be >= 1, got {self.repeats}")


@dataclass(frozen=True)
class AblationSpec:
    """Loss-term grid: which (distillation x quantization) variants at which widths."""

    bit_lengths: tuple = (16,)
    variants: tuple = ABLATION_VARIANTS

    def __post_init__(self):
        lengths = tuple(int(k) for k in self.bit_lengths)
        if not lengths or any(k < 1 for k in lengths):
            raise InvalidConfigError(
                f"bit_lengths must be non-empty positive ints, got {self.bit_lengths}"
            )
        object.__setattr__(self, "bit_lengths", lengths)
        variants = tuple(str(v) for v in self.variants)
        for v in variants:
            if v not in ABLATION_VARIANTS:
                raise InvalidConfigError(
                    f"unknown variant {v!r}; choose from {ABLATION_VARIANTS}"
                )
        if not variants:
            raise InvalidConfigError("variants must be non-empty")
        object.__setattr__(self, "variants", variants)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; serializes to a single JSON document."""

    output_dir: str
    train: TrainConfig
    data: object
    eval: EvalSpec = field(default_factory=EvalSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    ablation: AblationSpec = field(default_factory=AblationSpec)

    def __post_init__(self):
        if not isinstance(self.data, (SyntheticDataSpec, FileDataSpec)):
            raise InvalidConfigError(
                f"data must be a synthetic or file spec, got {type(self.data).__name__}"
            )
        if not self.output_dir:
            raise InvalidConfigError("output_dir must be a non-empty path")
        if isinstance(self.data, SyntheticDataSpec):
            if self.data.n_classes != self.train.n_classes:
                raise InvalidConfigError(
                    f"data.n_classes {self.data.n_classes} must match train.n_classes"
                    f" {self.train.n_classes}"
                )
            if self.data.dim != self.train.encoder.input_dim:
                raise InvalidConfigError(
                    f"data.dim {self.data.dim} must match encoder input_dim"
                    f" {self.train.encoder.input_dim}"
                )

    # -- serialization ---------------------------------------------------

    def to_dict(self):
        if isinstance(self.data, SyntheticDataSpec):
            co = self.data.cooccurrence
            data = {
                "kind": "synthetic",
                "n_classes": self.data.n_classes,
                "dim": self.data.dim,
                "n_train": self.data.n_train,
                "n_database": self.data.n_database,
                "n_query": self.data.n_query,
                "spread": self.data.spread,
                "seed": self.data.seed,
                "cooccurrence": None if co is None else np.asarray(co).tolist(),
            }
        else:
            data = {"kind": "file"}
            data.update({f.name: getattr(self.data, f.name) for f in fields(FileDataSpec)})
        return {
            "output_dir": self.output_dir,
            "train": {
                "code_length": self.train.code_length,
                "n_classes": self.train.n_classes,
                "batch_size": self.train.batch_size,
                "epochs": self.train.epochs,
                "seed": self.train.seed,
                "lambda1": self.train.lambda1,
                "lambda2": self.train.lambda2,
                "tau": self.train.tau,
                "sigma": self.train.sigma,
                "teacher_scale": self.train.teacher_scale,
                "student_scale": self.train.student_scale,
                "base_lr": self.train.base_lr,
                "distill": self.train.distill,
                "encoder": {
                    "input_dim": self.train.encoder.input_dim,
                    "hidden_dims": list(self.train.encoder.hidden_dims),
                    "code_length": self.train.encoder.code_length,
                    "activation": self.train.encoder.activation,
                },
            },
            "data": data,
            "eval": {"m": self.eval.m, "top_ranks": list(self.eval.top_ranks)},
            "sweep": {"scales": list(self.sweep.scales), "repeats": self.sweep.repeats},
            "ablation": {
                "bit_lengths": list(self.ablation.bit_lengths),
                "variants": list(self.ablation.variants),
            },
        }

    @classmethod
    def from_dict(cls, payload):
        if not isinstance(payload, dict):
            raise InvalidConfigError("config payload must be a mapping")
        known = {"output_dir", "train", "data", "eval", "sweep", "ablation"}
        for key in payload:
            if key not in known:
                raise InvalidConfigError(f"unknown config field {key}")
        if "output_dir" not in payload:
            raise InvalidConfigError("config requires output_dir")
        data = _data_from_dict(payload.get("data", {}))
        train = _train_from_dict(payload.get("train", {}), data)
        return cls(
            output_dir=str(payload["output_dir"]),
            train=train,
            data=data,
            eval=_section(EvalSpec, payload.get("eval", {}), "eval"),
            sweep=_section(SweepSpec, payload.get("sweep", {}), "sweep"),
            ablation=_section(AblationSpec, payload.get("ablation", {}), "ablation"),
        )


def _section(spec_cls, payload, name):
    if not isinstance(payload, dict):
        raise InvalidConfigError(f"{name} section must be a mapping")
    allowed = {f.name for f in fields(spec_cls)}
    for key in payload:
        if key not in allowed:
            raise InvalidConfigError(f"unknown config field {name}.{key}")
    coerced = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in payload.items()
    }
    return spec_cls(**coerced)


def _data_from_dict(payload):
    if not isinstance(payload, dict):
        raise InvalidConfigError("data section must be a mapping")
    kind = payload.get("kind", "synthetic")
    body = {k: v for k, v in payload.items() if k != "kind"}
    if kind == "synthetic":
        if body.get("cooccurrence") is not None:
            body["cooccurrence"] = tuple(tuple(row) for row in body["cooccurrence"])
        return _section(SyntheticDataSpec, body, "data")
    if kind == "file":
        allowed = {f.name for f in fields(FileDataSpec)}
        for key in body:
            if key not in allowed:
                raise InvalidConfigError(f"unknown config field data.{key}")
        missing = sorted(allowed - set(body))
        if missing:
            raise InvalidConfigError(f"data section missing path field data.{missing[0]}")
        return FileDataSpec(**{k: str(v) for k, v in body.items()})
    raise InvalidConfigError(f"data.kind must be 'synthetic' or 'file', got {kind!r}")


def _train_from_dict(payload, data):
    if not isinstance(payload, dict):
        raise InvalidConfigError("train section must be a mapping")
    allowed = {
        "code_length", "n_classes", "batch_size", "epochs", "seed",
        "lambda1", "lambda2", "tau", "sigma", "teacher_scale", "student_scale",
        "base_lr", "distill", "encoder",
    }
    for key in payload:
        if key not in allowed:
            raise InvalidConfigError(f"unknown config field train.{key}")
    body = dict(payload)
    synthetic = isinstance(data, SyntheticDataSpec)
    if "n_classes" not in body:
        if not synthetic:
            raise InvalidConfigError("train.n_classes is required with file data")
        body["n_classes"] = data.n_classes
    body.setdefault("code_length", 16)
    body.setdefault("batch_size", 32)
    body.setdefault("epochs", 100)
    body.setdefault("seed", 0)
    encoder_body = body.pop("encoder", {})
    if not isinstance(encoder_body, dict):
        raise InvalidConfigError("train.encoder must be a mapping")
    enc_allowed = {"input_dim", "hidden_dims", "code_length", "activation"}
    for key in encoder_body:
        if key not in enc_allowed:
            raise InvalidConfigError(f"unknown config field train.encoder.{key}")
    enc = dict(encoder_body)
    if "input_dim" not in enc:
        if not synthetic:
            raise InvalidConfigError("train.encoder.input_dim is required with file data")
        enc["input_dim"] = data.dim
    enc.setdefault("hidden_dims", DEFAULT_HIDDEN_DIMS)
    enc.setdefault("code_length", body["code_length"])
    enc["hidden_dims"] = tuple(enc["hidden_dims"])
    encoder = EncoderConfig(**enc)
    return TrainConfig(encoder=encoder, **body)


def default_experiment(output_dir):
    """The reference experiment: 8 Gaussian clusters in 64-D, 16-bit codes."""
    return ExperimentConfig.from_dict({"output_dir": output_dir})


def variant_train_config(train, variant, code_length=None):
    """Resolve an ablation variant name into a concrete training config.

    ``-sdh`` removes the distillation term and trains on a single
    strong view; ``-bceq`` zeroes the quantization weight.
    """
    if variant not in ABLATION_VARIANTS:
        raise InvalidConfigError(f"unknown variant {variant!r}; choose from {ABLATION_VARIANTS}")
    changes = {}
    if variant.startswith("-sdh"):
        changes["distill"] = False
        changes["teacher_scale"] = train.student_scale
    if variant.endswith("-bceq"):
        changes["lambda2"] = 0.0
    if code_length is not None and code_length != train.code_length:
        changes["code_length"] = code_length
        changes["encoder"] = replace(train.encoder, code_length=code_length)
    return replace(train, **changes)


def apply_overrides(payload, assignments):
    """Apply ``dotted.path=json_value`` assignments to a config dict copy."""
    out = copy.deepcopy(payload)
    for assignment in assignments:
        if "=" not in assignment:
            raise InvalidConfigError(
                f"override {assignment!r} must look like section.field=value"
            )
        dotted, raw = assignment.split("=", 1)
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise InvalidConfigError(f"override {assignment!r} has an empty path")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for key in keys[:-1]:
            nxt = node.get(key)
            if nxt is None:
                nxt = node[key] = {}
            if not isinstance(nxt, dict):
                raise InvalidConfigError(
                    f"cannot override through {key} in {dotted!r}: not a section"
                )
            node = nxt
        node[keys[-1]] = value
    return out


def save_config(config, path):
    """Write the resolved config as stable, sorted JSON."""
    payload = json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(payload)


def load_config(path, overrides=()):
    """Read a JSON config file and apply dotted overrides."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if overrides:
        payload = apply_overrides(payload, overrides)
    return ExperimentConfig.from_dict(payload)
