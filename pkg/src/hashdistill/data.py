"""Synthetic cluster datasets and the on-disk feature/label table formats.

Features are Gaussian clusters around random centroids; labels are
multi-hot with an optional class co-occurrence matrix. Both tables exist
as flat text (header line + one sample per row) and as a packed binary
variant; text floats use shortest round-trip formatting so
write -> read -> write is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidConfigError, InvalidInputError

FEATURES_MAGIC = b"DHDF"
LABELS_MAGIC = b"DHDL"
TABLE_VERSION = 1
_FEATURES_HEADER = struct.Struct("<4sHHQ")  # magic, version, dim, count
_LABELS_HEADER = struct.Struct("<4sHHQ")  # magic, version, classes, count


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic retrieval dataset.

    ``spread`` scales the per-coordinate noise std by the mean pairwise
    centroid distance, so difficulty is comparable across dimensions.
    ``cooccurrence[i, j]`` is the probability that class j joins a
    sample whose primary class is i; None means single-label.
    """

    n_classes: int
    dim: int
    n_train: int
    n_database: int
    n_query: int
    spread: float
    cooccurrence: object = None

    def __post_init__(self):
        if self.n_classes < 2:
            raise InvalidConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.dim < 1:
            raise InvalidConfigError(f"dim must be >= 1, got {self.dim}")
        for name in ("n_train", "n_database", "n_query"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.spread < 0:
            raise InvalidConfigError(f"spread must be non-negative, got {self.spread}")
        if self.cooccurrence is not None:
            matrix = np.asarray(self.cooccurrence, dtype=np.float64)
            if matrix.shape != (self.n_classes, self.n_classes):
                raise InvalidConfigError(
                    f"cooccurrence shape {matrix.shape} does not match"
                    f" ({self.n_classes}, {self.n_classes})"
                )
            if np.any(matrix < 0) or np.any(matrix > 1):
                raise InvalidConfigError("cooccurrence entries must be in [0, 1]")
            object.__setattr__(self, "cooccurrence", matrix)


@dataclass(frozen=True)
class SyntheticDataset:
    """Disjoint train/database/query splits plus the generating centroids."""

    centroids: np.ndarray
    train_features: np.ndarray
    train_labels: np.ndarray
    db_features: np.ndarray
    db_labels: np.ndarray
    query_features: np.ndarray
    query_labels: np.ndarray


def generate_synthetic(spec, rng):
    """Draw a dataset from ``spec``; deterministic for a given rng state."""
    c, dim = spec.n_classes, spec.dim
    centroids = rng.normal(size=(c, dim))
    diffs = centroids[:, None, :] - centroids[None, :, :]
    distances = np.sqrt((diffs**2).sum(axis=2))
    mean_distance = distances[np.triu_indices(c, k=1)].mean()
    noise_std = spec.spread * mean_distance

    total = spec.n_train + spec.n_database + spec.n_query
    primaries = rng.integers(0, c, size=total)
    labels = np.zeros((total, c))
    labels[np.arange(total), primaries] = 1.0
    if spec.cooccurrence is not None:
        extra = rng.random((total, c)) < spec.cooccurrence[primaries]
        extra[np.arange(total), primaries] = False
        labels[extra] = 1.0
    features = labels @ centroids / labels.sum(axis=1, keepdims=True)
    features = features + rng.normal(0.0, 1.0, size=(total, dim)) * noise_std

    bounds = (spec.n_train, spec.n_train + spec.n_database)
    return SyntheticDataset(
        centroids=centroids,
        train_features=features[: bounds[0]],
        train_labels=labels[: bounds[0]],
        db_features=features[bounds[0] : bounds[1]],
        db_labels=labels[bounds[0] : bounds[1]],
        query_features=features[bounds[1] :],
        query_labels=labels[bounds[1] :],
    )


def _validate_features(features):
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"features must be a non-empty 2-D array, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("features contain non-finite values")
    return arr


def _validate_labels(labels):
    arr = np.asarray(labels, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"labels must be a non-empty 2-D array, got {arr.shape}")
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise InvalidInputError("labels must be 0/1 multi-hot rows")
    if np.any(arr.sum(axis=1) < 1.0):
        raise InvalidConfigError("every label row needs at least one positive class")
    return arr


def write_features(path, features):
    """Write a feature table; '.bin' suffix selects the binary variant."""
    arr = _validate_features(features)
    n, dim = arr.shape
    path = str(path)
    if path.endswith(".bin"):
        with open(path, "wb") as fh:
            fh.write(_FEATURES_HEADER.pack(FEATURES_MAGIC, TABLE_VERSION, dim, n))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    else:
        lines = [f"# hashdistill-features v{TABLE_VERSION} count={n} dim={dim}"]
        for row in arr:
            lines.append(",".join(repr(float(v)) for v in row))
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")


def read_features(path):
    """Read a feature table written by ``write_features`` (either variant)."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == FEATURES_MAGIC:
            header = head + fh.read(_FEATURES_HEADER.size - 4)
            if len(header) < _FEATURES_HEADER.size:
                raise FormatError("feature table header truncated")
            _, version, dim, count = _FEATURES_HEADER.unpack(header)
            if version != TABLE_VERSION:
                raise FormatError(f"unsupported feature table version {version}")
            body = fh.read()
            expected = count * dim * 8
            if len(body) != expected:
                raise FormatError(
                    f"feature table body is {len(body)} bytes, expected {expected}"
                )
            return np.frombuffer(body, dtype="<f8").reshape(count, dim).astype(np.float64)
    return _read_features_text(path)


def _read_features_text(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty feature table")
    parts = lines[0].split()
    if (
        len(parts) != 5
        or parts[0] != "#"
        or parts[1] != "hashdistill-features"
        or parts[2] != f"v{TABLE_VERSION}"
    ):
        raise FormatError(f"bad feature table header: {lines[0]!r}")
    try:
        count = int(parts[3].removeprefix("count="))
        dim = int(parts[4].removeprefix("dim="))
    except ValueError as exc:
        raise FormatError(f"bad feature table header: {lines[0]!r}") from exc
    rows = lines[1:]
    if len(rows) != count:
        raise FormatError(f"feature table has {len(rows)} rows, header says {count}")
    out = np.empty((count, dim))
    for i, row in enumerate(rows):
        cells = row.split(",")
        if len(cells) != dim:
            raise FormatError(f"feature row {i} has {len(cells)} cells, expected {dim}")
        try:
            out[i] = [float(cell) for cell in cells]
        except ValueError as exc:
            raise FormatError(f"feature row {i} has a non-numeric cell") from exc
    return out


def write_labels(path, labels):
    """Write a label table; '.bin' suffix selects the binary variant."""
    arr = _validate_labels(labels)
    n, classes = arr.shape
    path = str(path)
    if path.endswith(".bin"):
        with open(path, "wb") as fh:
            fh.write(_LABELS_HEADER.pack(LABELS_MAGIC, TABLE_VERSION, classes, n))
            fh.write(arr.astype(np.uint8).tobytes())
    else:
        lines = [f"# hashdistill-labels v{TABLE_VERSION} count={n} classes={classes}"]
        for row in arr:
            lines.append(";".join(str(i) for i in np.flatnonzero(row)))
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")


def read_labels(path):
    """Read a label table written by ``write_labels`` (either variant)."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == LABELS_MAGIC:
            header = head + fh.read(_LABELS_HEADER.size - 4)
            if len(header) < _LABELS_HEADER.size:
                raise FormatError("label table header truncated")
            _, version, classes, count = _LABELS_HEADER.unpack(header)
            if version != TABLE_VERSION:
                raise FormatError(f"unsupported label table version {version}")
            body = fh.read()
            if len(body) != count * classes:
                raise FormatError(
                    f"label table body is {len(body)} bytes, expected {count * classes}"
                )
            return np.frombuffer(body, dtype=np.uint8).reshape(count, classes).astype(np.float64)
    return _read_labels_text(path)


def _read_labels_text(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty label table")
    parts = lines[0].split()
    if (
        len(parts) != 5
        or parts[0] != "#"
        or parts[1] != "hashdistill-labels"
        or parts[2] != f"v{TABLE_VERSION}"
    ):
        raise FormatError(f"bad label table header: {lines[0]!r}")
    try:
        count = int(parts[3].removeprefix("count="))
        classes = int(parts[4].removeprefix("classes="))
    except ValueError as exc:
        raise FormatError(f"bad label table header: {lines[0]!r}") from exc
    rows = lines[1:]
    if len(rows) != count:
        raise FormatError(f"label table has {len(rows)} rows, header says {count}")
    out = np.zeros((count, classes))
    for i, row in enumerate(rows):
        try:
            indices = [int(cell) for cell in row.split(";")]
        except ValueError as exc:
            raise FormatError(f"label row {i} has a non-integer index") from exc
        if not indices:
            raise FormatError(f"label row {i} is empty")
        if min(indices) < 0 or max(indices) >= classes:
            raise FormatError(f"label row {i} has an index outside [0, {classes})")
        out[i, indices] = 1.0
    return out
