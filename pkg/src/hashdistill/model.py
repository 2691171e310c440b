"""The trainable hashing model and its optimizer.

A small fully-connected encoder (relu hidden layers) feeds a single
fully-connected hash head whose tanh output is the continuous K-bit
code. Forward passes record an activation tape; ``backward`` replays it
in reverse for exact gradients. Training uses Adam with cosine
learning-rate decay.

Everything is float64 numpy: at this scale the cost is negligible and
gradient checks get tight tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

# tanh output is nudged off exact +-1 so codes stay strictly inside the
# open unit box even for extreme pre-activations (float64 tanh rounds to
# 1.0 beyond ~19.06).
SATURATION_LIMIT = 1.0 - 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the encoder + hash head."""

    input_dim: int
    hidden_dims: tuple
    code_length: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.input_dim < 1:
            raise InvalidConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(d < 1 for d in self.hidden_dims):
            raise InvalidConfigError(f"hidden dims must all be >= 1, got {self.hidden_dims}")
        if self.code_length < 1:
            raise InvalidConfigError(f"code_length must be >= 1, got {self.code_length}")
        if self.activation != "relu":
            raise InvalidConfigError(f"unsupported activation {self.activation!r}")

    def layer_dims(self):
        """Dimension sequence input -> hidden... -> code."""
        return (self.input_dim, *self.hidden_dims, self.code_length)


@dataclass
class ForwardTape:
    """Activations recorded by forward, consumed by backward."""

    inputs: np.ndarray
    hidden_pre: list
    head_pre: np.ndarray
    codes: np.ndarray
    single: bool


class HashModel:
    """relu MLP encoder with a tanh hash head.

    Parameters live in ``self.weights`` / ``self.biases``; ``parameters()``
    exposes them as one flat list of live arrays so the optimizer can
    update them in place.
    """

    def __init__(self, config, rng):
        self.config = config
        self.weights = []
        self.biases = []
        dims = config.layer_dims()
        for fan_in, fan_out in zip(dims, dims[1:]):
            limit = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-limit, limit, size=fan_out))

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        """Live parameter arrays, interleaved (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x):
        """Map features to continuous codes; returns (codes, tape)."""
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.config.input_dim:
            raise InvalidInputError(
                f"input shape {np.shape(x)} does not match input_dim {self.config.input_dim}"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("input contains non-finite values")
        hidden_pre = []
        act = arr
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            pre = act @ w.T + b
            hidden_pre.append(pre)
            act = np.maximum(pre, 0.0)
        head_pre = act @ self.weights[-1].T + self.biases[-1]
        codes = np.clip(np.tanh(head_pre), -SATURATION_LIMIT, SATURATION_LIMIT)
        tape = ForwardTape(
            inputs=arr, hidden_pre=hidden_pre, head_pre=head_pre, codes=codes, single=single
        )
        return (codes[0] if single else codes), tape

    def backward(self, tape, grad_wrt_codes):
        """Exact reverse-mode parameter gradients for one forward tape.

        Returns arrays aligned with ``parameters()``.
        """
        grad = np.asarray(grad_wrt_codes, dtype=np.float64)
        if tape.single:
            if grad.shape != tape.codes[0].shape:
                raise InvalidInputError(
                    f"upstream gradient shape {grad.shape} does not match code shape"
                    f" {tape.codes[0].shape}"
                )
            grad = grad[None, :]
        elif grad.shape != tape.codes.shape:
            raise InvalidInputError(
                f"upstream gradient shape {grad.shape} does not match codes {tape.codes.shape}"
            )
        activations = [tape.inputs]
        for pre in tape.hidden_pre:
            activations.append(np.maximum(pre, 0.0))
        weight_grads = [None] * self.n_layers
        bias_grads = [None] * self.n_layers
        delta = grad * (1.0 - tape.codes**2)
        weight_grads[-1] = delta.T @ activations[-1]
        bias_grads[-1] = delta.sum(axis=0)
        upstream = delta @ self.weights[-1]
        for layer in range(self.n_layers - 2, -1, -1):
            delta = upstream * (tape.hidden_pre[layer] > 0)
            weight_grads[layer] = delta.T @ activations[layer]
            bias_grads[layer] = delta.sum(axis=0)
            upstream = delta @ self.weights[layer]
        out = []
        for wg, bg in zip(weight_grads, bias_grads):
            out.append(wg)
            out.append(bg)
        return out


def cosine_lr(step, total_steps, base_lr):
    """Cosine-decayed learning rate: base_lr * 0.5 * (1 + cos(pi * step / total))."""
    if total_steps < 1:
        raise InvalidConfigError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise InvalidInputError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimizerState:
    """Adam accumulators plus the cosine schedule's bookkeeping."""

    first_moments: list
    second_moments: list
    step_count: int
    base_lr: float
    beta1: float
    beta2: float
    eps_adam: float
    total_steps: int

    @classmethod
    def for_params(
        cls,
        params,
        base_lr=1e-3,
        total_steps=1,
        beta1=0.9,
        beta2=0.999,
        eps_adam=1e-8,
    ):
        if not base_lr > 0:
            raise InvalidConfigError(f"base_lr must be positive, got {base_lr}")
        if total_steps < 1:
            raise InvalidConfigError(f"total_steps must be >= 1, got {total_steps}")
        return cls(
            first_moments=[np.zeros_like(p) for p in params],
            second_moments=[np.zeros_like(p) for p in params],
            step_count=0,
            base_lr=base_lr,
            beta1=beta1,
            beta2=beta2,
            eps_adam=eps_adam,
            total_steps=total_steps,
        )


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place; returns ``params``.

    The learning rate comes from the cosine schedule at the pre-update
    step count, so the very first step uses the full base rate.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise InvalidInputError(
            f"got {len(params)} params, {len(grads)} grads,"
            f" {len(state.first_moments)} moment slots"
        )
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise InvalidInputError(
                f"gradient shape {np.shape(g)} does not match parameter shape {p.shape}"
            )
    lr = cosine_lr(min(state.step_count, state.total_steps), state.total_steps, state.base_lr)
    t = state.step_count + 1
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps_adam)
    state.step_count = t
    return params
