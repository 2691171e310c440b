"""Training objectives for the hashing model.

Three terms drive training:

* a distillation term that pulls the student view's code toward the
  teacher view's code in cosine similarity,
* a proxy-similarity term that classifies the teacher code against one
  trainable proxy vector per class,
* a quantization term that pushes each code coordinate toward +-1 by
  scoring it under two Gaussian likelihood estimators centred there.

All gradients are exact closed forms; finite differences in the test
suite keep them honest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import NORM_EPS
from .errors import DegenerateInputError, InvalidConfigError, InvalidInputError

# Likelihoods are clamped into [EPS, 1 - EPS] before entering a log.
LIKELIHOOD_EPS = 1e-7


def _as_float_vector(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def _as_float_matrix(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class SdhLoss:
    """Distillation loss value and its gradient w.r.t. the student code.

    The teacher code is treated as a constant (stop-gradient), so no
    teacher gradient exists here by construction.
    """

    value: float
    grad_student: np.ndarray


@dataclass(frozen=True)
class LossGrad:
    """A scalar loss with the gradient w.r.t. its primary input."""

    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class LossBundle:
    """Per-batch means of each loss term and their weighted total."""

    hp: float
    sdh: float
    bceq: float
    total: float
    lambda1: float
    lambda2: float
    tau: float
    sigma: float


@dataclass(frozen=True)
class GaussianEstimator:
    """Unnormalized Gaussian likelihood centred at one of the two bit poles."""

    mean: float
    sigma: float

    def __post_init__(self):
        if self.mean not in (-1.0, 1.0):
            raise InvalidConfigError(f"estimator mean must be -1 or +1, got {self.mean}")
        if not self.sigma > 0:
            raise InvalidConfigError(f"estimator sigma must be positive, got {self.sigma}")

    def likelihood(self, h):
        h = np.asarray(h, dtype=np.float64)
        return np.exp(-((h - self.mean) ** 2) / (2.0 * self.sigma**2))


def gaussian_likelihood(estimator, h):
    """Evaluate ``estimator`` at ``h`` (scalar or array)."""
    out = estimator.likelihood(h)
    return float(out) if np.ndim(h) == 0 else out


class ProxyBank:
    """One trainable proxy vector per class, living in code space.

    The array is deliberately mutable: the trainer updates it in place
    through its optimizer and re-clamps after each step.
    """

    def __init__(self, proxies):
        arr = np.array(proxies, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError(f"proxies must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError(f"proxies must be non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("proxies contain non-finite values")
        self.proxies = arr

    @classmethod
    def from_random(cls, n_classes, code_length, rng):
        """Draw proxies with N(0, 1/K) entries so rows start near unit norm."""
        scale = 1.0 / np.sqrt(code_length)
        return cls(rng.normal(0.0, scale, size=(n_classes, code_length)))

    @property
    def n_classes(self):
        return self.proxies.shape[0]

    @property
    def code_length(self):
        return self.proxies.shape[1]

    def clamp(self):
        """Clip every proxy coordinate into [-1, 1] in place."""
        np.clip(self.proxies, -1.0, 1.0, out=self.proxies)


def normalize_multilabel(labels):
    """Scale a multi-hot 0/1 label vector so its entries sum to one."""
    y = _as_float_vector(labels, "labels")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidInputError("labels must be a 0/1 multi-hot vector")
    total = y.sum()
    if total < 1.0:
        raise InvalidInputError("label vector has no positive class")
    return y / total


def sdh_loss(teacher, student):
    """Distillation loss 1 - cos(teacher, student) with stop-gradient teacher."""
    values, grads = sdh_loss_batch(
        np.asarray(teacher, dtype=np.float64)[None, :],
        np.asarray(student, dtype=np.float64)[None, :],
    )
    return SdhLoss(float(values[0]), grads[0])


def sdh_loss_batch(teacher, student):
    """Row-wise distillation loss; returns (values (N,), student grads (N, K))."""
    h_t = _as_float_matrix(teacher, "teacher codes")
    h_s = _as_float_matrix(student, "student codes")
    if h_t.shape != h_s.shape:
        raise InvalidInputError(
            f"teacher/student shapes differ: {h_t.shape} vs {h_s.shape}"
        )
    norm_t = np.linalg.norm(h_t, axis=1)
    norm_s = np.linalg.norm(h_s, axis=1)
    bad = np.flatnonzero((norm_t < NORM_EPS) | (norm_s < NORM_EPS))
    if bad.size:
        raise DegenerateInputError(f"code in row {bad[0]} has near-zero norm")
    raw = np.einsum("ij,ij->i", h_t, h_s) / (norm_t * norm_s)
    values = 1.0 - np.clip(raw, -1.0, 1.0)
    # d(1 - cos)/dh_s = -(h_t / (|h_t||h_s|) - cos * h_s / |h_s|^2)
    grads = -(
        h_t / (norm_t * norm_s)[:, None] - (raw / norm_s**2)[:, None] * h_s
    )
    return values, grads


def proxy_predictions(bank, code):
    """Cosine similarity of ``code`` against every proxy, clamped to [-1, 1]."""
    h = _as_float_vector(code, "code")
    return proxy_similarities(h[None, :], bank.proxies, clamp=True)[0]


def proxy_similarities(codes, proxies, clamp=False):
    """Cosine similarities between code rows and proxy rows, shape (N, C)."""
    h = _as_float_matrix(codes, "codes")
    p = _as_float_matrix(proxies, "proxies")
    if h.shape[1] != p.shape[1]:
        raise InvalidInputError(
            f"code length {h.shape[1]} does not match proxy length {p.shape[1]}"
        )
    norm_h = np.linalg.norm(h, axis=1)
    norm_p = np.linalg.norm(p, axis=1)
    bad_h = np.flatnonzero(norm_h < NORM_EPS)
    if bad_h.size:
        raise DegenerateInputError(f"code row {bad_h[0]} has near-zero norm")
    bad_p = np.flatnonzero(norm_p < NORM_EPS)
    if bad_p.size:
        raise DegenerateInputError(f"proxy row {bad_p[0]} has near-zero norm")
    sims = (h @ p.T) / np.outer(norm_h, norm_p)
    if clamp:
        sims = np.clip(sims, -1.0, 1.0)
    return sims


def proxy_similarity_grads(codes, proxies, upstream):
    """Backpropagate through the cosine-similarity matrix.

    Given d(loss)/d(sims) as ``upstream`` (N, C), returns the pair
    (d(loss)/d(codes) of shape (N, K), d(loss)/d(proxies) of shape (C, K)).
    """
    h = _as_float_matrix(codes, "codes")
    p = _as_float_matrix(proxies, "proxies")
    g = _as_float_matrix(upstream, "upstream gradient")
    if g.shape != (h.shape[0], p.shape[0]):
        raise InvalidInputError(
            f"upstream shape {g.shape} does not match ({h.shape[0]}, {p.shape[0]})"
        )
    norm_h = np.linalg.norm(h, axis=1)
    norm_p = np.linalg.norm(p, axis=1)
    sims = (h @ p.T) / np.outer(norm_h, norm_p)
    scaled = g / np.outer(norm_h, norm_p)
    d_codes = scaled @ p - ((g * sims).sum(axis=1) / norm_h**2)[:, None] * h
    d_proxies = scaled.T @ h - ((g * sims).sum(axis=0) / norm_p**2)[:, None] * p
    return d_codes, d_proxies


def hp_loss(labels, predictions, tau):
    """Cross-entropy between normalized labels and softmax(predictions / tau)."""
    values, grads = hp_loss_batch(
        np.asarray(labels, dtype=np.float64)[None, :],
        np.asarray(predictions, dtype=np.float64)[None, :],
        tau,
    )
    return LossGrad(float(values[0]), grads[0])


def hp_loss_batch(labels, predictions, tau):
    """Row-wise proxy-similarity loss; returns (values (N,), grads (N, C))."""
    if not tau > 0:
        raise InvalidConfigError(f"temperature must be positive, got {tau}")
    y = _as_float_matrix(labels, "labels")
    pred = _as_float_matrix(predictions, "predictions")
    if y.shape != pred.shape:
        raise InvalidInputError(f"labels shape {y.shape} does not match predictions {pred.shape}")
    if np.any(y < 0):
        raise InvalidInputError("labels must be non-negative")
    sums = y.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
    if bad.size:
        raise InvalidInputError(
            f"label row {bad[0]} sums to {sums[bad[0]]}; normalize labels first"
        )
    z = pred / tau
    z_max = z.max(axis=1, keepdims=True)
    log_sum = z_max[:, 0] + np.log(np.exp(z - z_max).sum(axis=1))
    values = log_sum - np.einsum("ij,ij->i", y, z)
    softmax = np.exp(z - log_sum[:, None])
    grads = (softmax - y) / tau
    return values, grads


def bceq_loss(code, sigma):
    """Binary-cross-entropy quantization loss for one continuous code."""
    values, grads = bceq_loss_batch(np.asarray(code, dtype=np.float64)[None, :], sigma)
    return LossGrad(float(values[0]), grads[0])


def bceq_loss_batch(codes, sigma):
    """Row-wise quantization loss; returns (values (N,), grads (N, K)).

    Each coordinate is scored by two Gaussian likelihood estimators
    centred at +1 and -1; the binary targets come from the coordinate's
    sign and are treated as constants, so the only gradient path runs
    through the likelihoods. Clamped likelihoods contribute no gradient.
    """
    if not sigma > 0:
        raise InvalidConfigError(f"sigma must be positive, got {sigma}")
    h = _as_float_matrix(codes, "codes")
    k = h.shape[1]
    if k < 1:
        raise InvalidInputError("codes must have at least one coordinate")
    b_pos = np.where(h >= 0, 1.0, 0.0)
    b_neg = 1.0 - b_pos
    inv_two_sigma_sq = 1.0 / (2.0 * sigma**2)
    raw_pos = np.exp(-((h - 1.0) ** 2) * inv_two_sigma_sq)
    raw_neg = np.exp(-((h + 1.0) ** 2) * inv_two_sigma_sq)
    g_pos = np.clip(raw_pos, LIKELIHOOD_EPS, 1.0 - LIKELIHOOD_EPS)
    g_neg = np.clip(raw_neg, LIKELIHOOD_EPS, 1.0 - LIKELIHOOD_EPS)

    def bce(target, likelihood):
        return -(target * np.log(likelihood) + (1.0 - target) * np.log(1.0 - likelihood))

    values = (bce(b_pos, g_pos) + bce(b_neg, g_neg)).sum(axis=1) / k

    def bce_grad(target, likelihood):
        return -target / likelihood + (1.0 - target) / (1.0 - likelihood)

    d_raw_pos = raw_pos * (-(h - 1.0) * 2.0 * inv_two_sigma_sq)
    d_raw_neg = raw_neg * (-(h + 1.0) * 2.0 * inv_two_sigma_sq)
    active_pos = (raw_pos == g_pos).astype(np.float64)
    active_neg = (raw_neg == g_neg).astype(np.float64)
    grads = (
        bce_grad(b_pos, g_pos) * d_raw_pos * active_pos
        + bce_grad(b_neg, g_neg) * d_raw_neg * active_neg
    ) / k
    return values, grads


def total_loss(labels, teacher, student, predictions, lambda1, lambda2, tau, sigma):
    """Batch-mean training objective: hp + lambda1 * sdh + lambda2 * bceq.

    ``predictions`` are the proxy similarities of the teacher codes; the
    quantization term is evaluated on the teacher codes as well, since the
    teacher view is the one whose code is served at retrieval time.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise InvalidConfigError(
            f"loss weights must be non-negative, got lambda1={lambda1}, lambda2={lambda2}"
        )
    y = _as_float_matrix(labels, "labels")
    if y.shape[0] < 1:
        raise InvalidInputError("empty batch")
    hp_values, _ = hp_loss_batch(y, predictions, tau)
    sdh_values, _ = sdh_loss_batch(teacher, student)
    bceq_values, _ = bceq_loss_batch(teacher, sigma)
    hp = float(hp_values.mean())
    sdh = float(sdh_values.mean())
    bceq = float(bceq_values.mean())
    total = hp + lambda1 * sdh + lambda2 * bceq
    return LossBundle(
        hp=hp,
        sdh=sdh,
        bceq=bceq,
        total=total,
        lambda1=lambda1,
        lambda2=lambda2,
        tau=tau,
        sigma=sigma,
    )
