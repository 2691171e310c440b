"""Two-view distillation training loop with joint proxy updates.

Every mini-batch draws a weak (teacher) and a strong (student) view per
sample, runs both through the shared-weight model, and takes one Adam
step on the encoder, hash head, and proxy bank together. The teacher
code drives the proxy-similarity and quantization terms; the
distillation term treats it as a constant and pushes only the student
path (stop-gradient). Proxies carry their own quantization term,
averaged over classes and weighted like the code-level one.

Randomness discipline: every stream is derived from the config seed by
purpose — ``view_rng(seed, epoch, index, view)`` for per-sample view
draws (view 0 = teacher, 1 = student) and ``shuffle_rng(seed, epoch)``
for epoch ordering. Nothing depends on mutable generator state, so a
checkpoint restored at an epoch boundary continues bit-exactly, and a
single-view run consumes exactly the same teacher draws as a two-view
run.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import default_train_group, sample_transform
from .errors import (
    FormatError,
    HashDistillError,
    InvalidConfigError,
    InvalidInputError,
)
from .losses import (
    ProxyBank,
    bceq_loss_batch,
    hp_loss_batch,
    proxy_similarities,
    proxy_similarity_grads,
    sdh_loss_batch,
)
from .model import EncoderConfig, HashModel, OptimizerState, adam_step, cosine_lr

CHECKPOINT_MAGIC = b"DHCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHQ")  # magic, version, JSON header length

_VIEW_NAMESPACE = 1
_SHUFFLE_NAMESPACE = 2


def view_rng(seed, epoch, index, view):
    """The dedicated RNG stream for one sample's view draw.

    ``view`` 0 is the teacher (loss-bearing) view, 1 the student view.
    """
    return np.random.default_rng(np.random.SeedSequence((seed, _VIEW_NAMESPACE, epoch, index, view)))


def shuffle_rng(seed, epoch):
    """The dedicated RNG stream for one epoch's sample ordering."""
    return np.random.default_rng(np.random.SeedSequence((seed, _SHUFFLE_NAMESPACE, epoch)))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    code_length: int
    n_classes: int
    batch_size: int
    epochs: int
    seed: int
    encoder: EncoderConfig
    lambda1: float = 0.1
    lambda2: float = 0.1
    tau: float = 0.2
    sigma: float = 0.5
    teacher_scale: float = 0.5
    student_scale: float = 1.0
    base_lr: float = 1e-3
    distill: bool = True

    def __post_init__(self):
        if self.code_length < 1:
            raise InvalidConfigError(f"code_length must be >= 1, got {self.code_length}")
        if self.code_length != self.encoder.code_length:
            raise InvalidConfigError(
                f"code_length {self.code_length} must match encoder code_length"
                f" {self.encoder.code_length}"
            )
        if self.n_classes < 1:
            raise InvalidConfigError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InvalidConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.seed < 0:
            raise InvalidConfigError(f"seed must be non-negative, got {self.seed}")
        if self.lambda1 < 0:
            raise InvalidConfigError(f"lambda1 must be non-negative, got {self.lambda1}")
        if self.lambda2 < 0:
            raise InvalidConfigError(f"lambda2 must be non-negative, got {self.lambda2}")
        if not self.tau > 0:
            raise InvalidConfigError(f"tau must be positive, got {self.tau}")
        if not self.sigma > 0:
            raise InvalidConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.teacher_scale <= 1.0:
            raise InvalidConfigError(
                f"teacher_scale must be in [0, 1], got {self.teacher_scale}"
            )
        if not 0.0 <= self.student_scale <= 1.0:
            raise InvalidConfigError(
                f"student_scale must be in [0, 1], got {self.student_scale}"
            )
        if not self.base_lr > 0:
            raise InvalidConfigError(f"base_lr must be positive, got {self.base_lr}")


@dataclass(frozen=True)
class StepResult:
    """Per-batch loss terms (batch means) and the full gradient list."""

    hp: float
    sdh: float
    bceq: float
    proxy_bceq: float
    total: float
    grads: list


@dataclass(frozen=True)
class EpochStats:
    """Per-epoch means of each loss term plus schedule/runtime info."""

    epoch: int
    hp: float
    sdh: float
    bceq: float
    proxy_bceq: float
    total: float
    lr: float
    seconds: float


class Trainer:
    """Owns the model, proxies, optimizer, and the training data."""

    def __init__(self, config, features, labels):
        self.config = config
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or not np.all(np.isfinite(feats)):
            raise InvalidInputError("features must be a finite 2-D array")
        if feats.shape[1] != config.encoder.input_dim:
            raise InvalidInputError(
                f"features have {feats.shape[1]} dims, encoder input_dim is"
                f" {config.encoder.input_dim}"
            )
        labs = np.asarray(labels, dtype=np.float64)
        if labs.shape != (feats.shape[0], config.n_classes):
            raise InvalidInputError(
                f"labels shape {labs.shape} does not match"
                f" ({feats.shape[0]}, n_classes={config.n_classes})"
            )
        if not np.all((labs == 0.0) | (labs == 1.0)):
            raise InvalidInputError("labels must be 0/1 multi-hot rows")
        sums = labs.sum(axis=1)
        if np.any(sums < 1.0):
            raise InvalidInputError(
                f"label row {int(np.flatnonzero(sums < 1.0)[0])} has no positive class"
            )
        self.features = feats
        self.labels = labs
        self.normalized_labels = labs / sums[:, None]
        self.n_samples = feats.shape[0]

        master = np.random.default_rng(config.seed)
        self.model = HashModel(config.encoder, master)
        self.proxies = ProxyBank.from_random(config.n_classes, config.code_length, master)
        steps_per_epoch = -(-self.n_samples // config.batch_size)
        self.optimizer = OptimizerState.for_params(
            self.params,
            base_lr=config.base_lr,
            total_steps=steps_per_epoch * config.epochs,
        )
        self.teacher_group = default_train_group(config.teacher_scale)
        self.student_group = default_train_group(config.student_scale)
        self.epoch = 0

    @property
    def params(self):
        """Live parameter arrays the optimizer updates: model then proxies."""
        return self.model.parameters() + [self.proxies.proxies]

    def _views(self, indices, epoch, group, view_id):
        dim = self.config.encoder.input_dim
        rows = []
        for i in indices:
            rng = view_rng(self.config.seed, epoch, int(i), view_id)
            rows.append(sample_transform(group, dim, rng).apply(self.features[i]))
        return np.stack(rows)

    def compute_batch(self, indices, epoch):
        """Loss terms and the joint gradient for one batch; no update."""
        idx = np.asarray(indices, dtype=np.intp)
        cfg = self.config
        n_batch = idx.size
        x_teacher = self._views(idx, epoch, self.teacher_group, 0)
        h_teacher, tape_teacher = self.model.forward(x_teacher)
        proxies = self.proxies.proxies
        predictions = proxy_similarities(h_teacher, proxies)
        hp_values, hp_grads = hp_loss_batch(
            self.normalized_labels[idx], predictions, cfg.tau
        )
        bceq_values, bceq_grads = bceq_loss_batch(h_teacher, cfg.sigma)
        proxy_values, proxy_grads = bceq_loss_batch(proxies, cfg.sigma)

        d_codes, d_proxies = proxy_similarity_grads(h_teacher, proxies, hp_grads / n_batch)
        d_codes += cfg.lambda2 * bceq_grads / n_batch
        d_proxies += cfg.lambda2 * proxy_grads / cfg.n_classes
        grads = self.model.backward(tape_teacher, d_codes)

        sdh = 0.0
        if cfg.distill:
            x_student = self._views(idx, epoch, self.student_group, 1)
            h_student, tape_student = self.model.forward(x_student)
            sdh_values, sdh_grads = sdh_loss_batch(h_teacher, h_student)
            sdh = float(sdh_values.mean())
            student_grads = self.model.backward(
                tape_student, cfg.lambda1 * sdh_grads / n_batch
            )
            grads = [g + s for g, s in zip(grads, student_grads)]
        grads.append(d_proxies)

        hp = float(hp_values.mean())
        bceq = float(bceq_values.mean())
        proxy_bceq = float(proxy_values.mean())
        total = hp + cfg.lambda1 * sdh + cfg.lambda2 * bceq + cfg.lambda2 * proxy_bceq
        return StepResult(
            hp=hp, sdh=sdh, bceq=bceq, proxy_bceq=proxy_bceq, total=total, grads=grads
        )

    def train_epoch(self):
        """One full shuffle-pass over the data; returns the epoch's stats."""
        cfg = self.config
        start_time = time.perf_counter()
        order = shuffle_rng(cfg.seed, self.epoch).permutation(self.n_samples)
        hp_sum = sdh_sum = bceq_sum = 0.0
        proxy_sum = 0.0
        steps = 0
        lr_used = cosine_lr(
            min(self.optimizer.step_count, self.optimizer.total_steps),
            self.optimizer.total_steps,
            cfg.base_lr,
        )
        for batch_index, start in enumerate(range(0, self.n_samples, cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            try:
                result = self.compute_batch(batch, self.epoch)
                lr_used = cosine_lr(
                    min(self.optimizer.step_count, self.optimizer.total_steps),
                    self.optimizer.total_steps,
                    cfg.base_lr,
                )
                adam_step(self.params, result.grads, self.optimizer)
                self.proxies.clamp()
            except HashDistillError as exc:
                raise type(exc)(f"batch {batch_index}: {exc}") from exc
            hp_sum += result.hp * batch.size
            sdh_sum += result.sdh * batch.size
            bceq_sum += result.bceq * batch.size
            proxy_sum += result.proxy_bceq
            steps += 1
        self.epoch += 1
        hp = hp_sum / self.n_samples
        sdh = sdh_sum / self.n_samples
        bceq = bceq_sum / self.n_samples
        proxy_bceq = proxy_sum / steps
        total = hp + cfg.lambda1 * sdh + cfg.lambda2 * bceq + cfg.lambda2 * proxy_bceq
        return EpochStats(
            epoch=self.epoch,
            hp=hp,
            sdh=sdh,
            bceq=bceq,
            proxy_bceq=proxy_bceq,
            total=total,
            lr=lr_used,
            seconds=time.perf_counter() - start_time,
        )

    def train(self, callback=None):
        """Run remaining epochs up to the configured count."""
        history = []
        while self.epoch < self.config.epochs:
            stats = self.train_epoch()
            history.append(stats)
            if callback is not None:
                callback(stats)
        return history

    # -- persistence ---------------------------------------------------

    def _tensor_items(self):
        items = []
        for i, p in enumerate(self.params):
            items.append((f"param_{i}", p))
        for i, m in enumerate(self.optimizer.first_moments):
            items.append((f"moment1_{i}", m))
        for i, v in enumerate(self.optimizer.second_moments):
            items.append((f"moment2_{i}", v))
        return items

    def checkpoint(self, path):
        """Dump config, parameters, and optimizer state; bit-exact restore."""
        tensors = self._tensor_items()
        header = {
            "config": _config_to_dict(self.config),
            "epoch": self.epoch,
            "optimizer": {
                "step_count": self.optimizer.step_count,
                "base_lr": self.optimizer.base_lr,
                "beta1": self.optimizer.beta1,
                "beta2": self.optimizer.beta2,
                "eps_adam": self.optimizer.eps_adam,
                "total_steps": self.optimizer.total_steps,
            },
            "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
        }
        payload = json.dumps(header, sort_keys=True).encode("ascii")
        with open(path, "wb") as fh:
            fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(payload)))
            fh.write(payload)
            for _, arr in tensors:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def restore(cls, path, features, labels):
        """Rebuild a trainer from a checkpoint; training continues bit-exactly."""
        with open(path, "rb") as fh:
            head = fh.read(_CKPT_HEADER.size)
            if len(head) < _CKPT_HEADER.size:
                raise FormatError("checkpoint header truncated")
            magic, version, header_len = _CKPT_HEADER.unpack(head)
            if magic != CHECKPOINT_MAGIC:
                raise FormatError(f"not a checkpoint file (magic {magic!r})")
            if version != CHECKPOINT_VERSION:
                raise FormatError(f"unsupported checkpoint version {version}")
            try:
                header = json.loads(fh.read(header_len).decode("ascii"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FormatError(f"unreadable checkpoint header: {exc}") from exc
            config = _config_from_dict(header["config"])
            trainer = cls(config, features, labels)
            items = trainer._tensor_items()
            manifest = header["tensors"]
            if len(manifest) != len(items):
                raise FormatError(
                    f"checkpoint lists {len(manifest)} tensors, expected {len(items)}"
                )
            for entry, (name, arr) in zip(manifest, items):
                if entry["name"] != name or tuple(entry["shape"]) != arr.shape:
                    raise FormatError(
                        f"tensor {entry['name']} with shape {tuple(entry['shape'])} does"
                        f" not match expected {name} {arr.shape}; checkpoint/config"
                        f" disagree (check code_length and encoder dims)"
                    )
                raw = fh.read(arr.size * 8)
                if len(raw) != arr.size * 8:
                    raise FormatError(f"checkpoint body truncated in tensor {name}")
                arr[...] = np.frombuffer(raw, dtype="<f8").reshape(arr.shape)
        trainer.epoch = int(header["epoch"])
        opt = header["optimizer"]
        trainer.optimizer.step_count = int(opt["step_count"])
        trainer.optimizer.base_lr = float(opt["base_lr"])
        trainer.optimizer.beta1 = float(opt["beta1"])
        trainer.optimizer.beta2 = float(opt["beta2"])
        trainer.optimizer.eps_adam = float(opt["eps_adam"])
        trainer.optimizer.total_steps = int(opt["total_steps"])
        return trainer


def _config_to_dict(config):
    return {
        "code_length": config.code_length,
        "n_classes": config.n_classes,
        "batch_size": config.batch_size,
        "epochs": config.epochs,
        "seed": config.seed,
        "lambda1": config.lambda1,
        "lambda2": config.lambda2,
        "tau": config.tau,
        "sigma": config.sigma,
        "teacher_scale": config.teacher_scale,
        "student_scale": config.student_scale,
        "base_lr": config.base_lr,
        "distill": config.distill,
        "encoder": {
            "input_dim": config.encoder.input_dim,
            "hidden_dims": list(config.encoder.hidden_dims),
            "code_length": config.encoder.code_length,
            "activation": config.encoder.activation,
        },
    }


def _config_from_dict(payload):
    encoder_payload = dict(payload["encoder"])
    encoder = EncoderConfig(
        input_dim=int(encoder_payload["input_dim"]),
        hidden_dims=tuple(encoder_payload["hidden_dims"]),
        code_length=int(encoder_payload["code_length"]),
        activation=encoder_payload.get("activation", "relu"),
    )
    return TrainConfig(
        code_length=int(payload["code_length"]),
        n_classes=int(payload["n_classes"]),
        batch_size=int(payload["batch_size"]),
        epochs=int(payload["epochs"]),
        seed=int(payload["seed"]),
        encoder=encoder,
        lambda1=float(payload["lambda1"]),
        lambda2=float(payload["lambda2"]),
        tau=float(payload["tau"]),
        sigma=float(payload["sigma"]),
        teacher_scale=float(payload["teacher_scale"]),
        student_scale=float(payload["student_scale"]),
        base_lr=float(payload["base_lr"]),
        distill=bool(payload["distill"]),
    )
