"""Stochastic feature-space transform groups for two-view training.

Each group holds an ordered list of transform specs; a drawn "composed
transform" includes each spec independently with probability
``scale * base_probability``, records every random draw it makes, and is
afterwards a pure deterministic function. The teacher group runs at a
reduced scale so its views stay easier than the student's.

The transform family acts on feature vectors: contiguous masking,
coordinate reversal, additive noise, random coordinate dropping, and
moving-average smoothing form the training family; global scaling,
planar rotations, and shears are held out as unseen deformations for
robustness evaluation.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

KINDS = (
    "mask-crop",
    "coordinate-flip",
    "additive-jitter",
    "channel-drop",
    "smooth-blur",
    "gaussian-noise",
    "zoom-scale",
    "rotation-mix",
    "shear-mix",
)

# Kinds whose strength is a coordinate fraction in [0, 1].
_FRACTION_KINDS = {"mask-crop", "channel-drop"}
# Kinds whose strength is a non-negative magnitude (noise std, shear coeff).
_MAGNITUDE_KINDS = {"additive-jitter", "gaussian-noise", "shear-mix"}


@dataclass(frozen=True)
class TransformSpec:
    """One member of a transform family.

    ``strength`` is the kind's main knob: zeroed fraction for masking
    kinds, noise standard deviation for jitter/noise, relative range for
    zoom, maximum angle (radians) for rotations, maximum coefficient for
    shears. ``window`` applies to smooth-blur; ``n_pairs`` to the
    rotation/shear mixers.
    """

    kind: str
    base_probability: float
    strength: float = 0.0
    window: int = 3
    n_pairs: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"unknown transform kind {self.kind!r}")
        if not 0.0 <= self.base_probability <= 1.0:
            raise InvalidConfigError(
                f"base_probability must be in [0, 1], got {self.base_probability}"
            )
        if self.kind in _FRACTION_KINDS and not 0.0 <= self.strength <= 1.0:
            raise InvalidConfigError(
                f"{self.kind} strength is a fraction in [0, 1], got {self.strength}"
            )
        if self.kind in _MAGNITUDE_KINDS and self.strength < 0:
            raise InvalidConfigError(
                f"{self.kind} strength must be non-negative, got {self.strength}"
            )
        if self.kind == "zoom-scale" and not 0.0 <= self.strength < 1.0:
            raise InvalidConfigError(
                f"zoom-scale strength must be in [0, 1) to keep factors positive,"
                f" got {self.strength}"
            )
        if self.kind == "rotation-mix" and not 0.0 <= self.strength <= math.pi:
            raise InvalidConfigError(
                f"rotation-mix strength is an angle in [0, pi], got {self.strength}"
            )
        if self.kind == "smooth-blur" and self.window < 1:
            raise InvalidConfigError(f"smooth-blur window must be >= 1, got {self.window}")
        if self.kind in ("rotation-mix", "shear-mix") and self.n_pairs < 1:
            raise InvalidConfigError(f"n_pairs must be >= 1, got {self.n_pairs}")


@dataclass(frozen=True)
class TransformGroup:
    """An ordered transform family with a shared occurrence scale.

    ``scale`` multiplies every member's base probability; 0 turns the
    group into a guaranteed identity (used when encoding untransformed
    inputs), 1 leaves base probabilities unchanged.
    """

    transforms: tuple
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if not 0.0 <= self.scale <= 1.0:
            raise InvalidConfigError(f"group scale must be in [0, 1], got {self.scale}")


class ComposedTransform:
    """A fully-drawn transform: an ordered list of recorded steps.

    ``steps`` holds plain-type records (kind plus the drawn parameters),
    so a composed transform can be serialized, logged, and rebuilt
    exactly via ``to_record``/``from_record``.
    """

    def __init__(self, dim, steps):
        self.dim = int(dim)
        self.steps = list(steps)

    def apply(self, x):
        """Apply every recorded step in order; pure and deterministic."""
        out = np.array(x, dtype=np.float64)
        if out.ndim != 1 or out.size != self.dim:
            raise InvalidInputError(
                f"input shape {np.shape(x)} does not match transform dim {self.dim}"
            )
        if not np.all(np.isfinite(out)):
            raise InvalidInputError("input contains non-finite values")
        for step in self.steps:
            kind = step["kind"]
            if kind == "mask-crop":
                out[step["start"] : step["start"] + step["length"]] = 0.0
            elif kind == "coordinate-flip":
                out = out[::-1].copy()
            elif kind in ("additive-jitter", "gaussian-noise"):
                out += np.asarray(step["noise"], dtype=np.float64)
            elif kind == "channel-drop":
                out[np.asarray(step["dropped"], dtype=np.intp)] = 0.0
            elif kind == "smooth-blur":
                out = _moving_average(out, step["window"])
            elif kind == "zoom-scale":
                out *= step["factor"]
            elif kind == "rotation-mix":
                for (i, j), angle in zip(step["pairs"], step["angles"]):
                    c, s = math.cos(angle), math.sin(angle)
                    out[i], out[j] = c * out[i] - s * out[j], s * out[i] + c * out[j]
            elif kind == "shear-mix":
                for (i, j), coeff in zip(step["pairs"], step["coeffs"]):
                    out[i] += coeff * out[j]
            else:
                raise InvalidInputError(f"unknown recorded step kind {kind!r}")
        return out

    def to_record(self):
        return {"dim": self.dim, "steps": copy.deepcopy(self.steps)}

    @classmethod
    def from_record(cls, record):
        return cls(record["dim"], copy.deepcopy(record["steps"]))


def _moving_average(x, window):
    """Centered moving average with a truncated window at the edges."""
    half = window // 2
    idx = np.arange(x.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, x.size)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    return (csum[hi] - csum[lo]) / (hi - lo)


def _draw_pairs(dim, n_pairs, rng):
    n = min(n_pairs, dim // 2)
    chosen = rng.permutation(dim)[: 2 * n]
    return [[int(chosen[2 * t]), int(chosen[2 * t + 1])] for t in range(n)]


def sample_transform(group, dim, rng):
    """Draw a composed transform from ``group`` for ``dim``-vector inputs.

    Each spec is included with probability ``group.scale *
    base_probability`` (one uniform draw per spec, in list order, so a
    fixed seed reproduces the exact same composition), then draws its
    own parameters.
    """
    if dim < 1:
        raise InvalidInputError(f"dim must be >= 1, got {dim}")
    steps = []
    for spec in group.transforms:
        if rng.random() >= group.scale * spec.base_probability:
            continue
        step = {"kind": spec.kind}
        if spec.kind == "mask-crop":
            max_len = max(1, int(spec.strength * dim))
            length = int(rng.integers(1, max_len + 1))
            step["start"] = int(rng.integers(0, dim - length + 1))
            step["length"] = length
        elif spec.kind in ("additive-jitter", "gaussian-noise"):
            step["noise"] = [float(v) for v in rng.normal(0.0, spec.strength, size=dim)]
        elif spec.kind == "channel-drop":
            step["dropped"] = [int(i) for i in np.flatnonzero(rng.random(dim) < spec.strength)]
        elif spec.kind == "smooth-blur":
            step["window"] = spec.window
        elif spec.kind == "zoom-scale":
            step["factor"] = float(1.0 + rng.uniform(-spec.strength, spec.strength))
        elif spec.kind == "rotation-mix":
            pairs = _draw_pairs(dim, spec.n_pairs, rng)
            step["pairs"] = pairs
            step["angles"] = [
                float(a) for a in rng.uniform(-spec.strength, spec.strength, size=len(pairs))
            ]
        elif spec.kind == "shear-mix":
            pairs = _draw_pairs(dim, spec.n_pairs, rng)
            step["pairs"] = pairs
            step["coeffs"] = [
                float(c) for c in rng.uniform(-spec.strength, spec.strength, size=len(pairs))
            ]
        # coordinate-flip records nothing beyond its kind
        steps.append(step)
    return ComposedTransform(dim, steps)


def default_train_group(scale):
    """The training transform family at the given occurrence scale."""
    return TransformGroup(
        (
            TransformSpec("mask-crop", 0.8, strength=0.25),
            TransformSpec("coordinate-flip", 0.5),
            TransformSpec("additive-jitter", 0.8, strength=0.5),
            TransformSpec("channel-drop", 0.2, strength=0.2),
            TransformSpec("smooth-blur", 0.5, window=3),
        ),
        scale=scale,
    )


def deformation_presets():
    """Held-out deformations for robustness evaluation, never used in training.

    Dropout and cutout reuse the masking mechanics (random coordinate
    subset / contiguous block) at fixed strengths; the rest are genuinely
    unseen families.
    """
    return {
        "gaussian-noise": TransformSpec("gaussian-noise", 1.0, strength=1.0),
        "dropout": TransformSpec("channel-drop", 1.0, strength=0.2),
        "cutout": TransformSpec("mask-crop", 1.0, strength=0.25),
        "zoom": TransformSpec("zoom-scale", 1.0, strength=0.3),
        "rotation": TransformSpec("rotation-mix", 1.0, strength=0.7854, n_pairs=8),
        "shear": TransformSpec("shear-mix", 1.0, strength=0.5, n_pairs=8),
    }
