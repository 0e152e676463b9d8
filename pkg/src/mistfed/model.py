"""Local MLP classifier over abstracted features, with FedProx training.

The classifier is a ReLU MLP with a softmax output, trained with mean
cross-entropy.  Parameters live in one flat float64 vector; layer ``l``
occupies ``W_l`` (row-major, shape ``(fan_in, fan_out)``) followed by ``b_l``.
Dropout is inverted dropout on hidden activations and only applies inside
:func:`local_train`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Literal

import numpy as np

from .errors import ConfigurationError, NumericError, ProtocolError, UsageError
from .numeric import AdamState, RngStream, adam_step, check_same_length, gd_step


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 64
    hidden_dims: tuple[int, ...] = (64, 32)
    num_classes: int = 2
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError("layer widths must be positive")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


@dataclass(frozen=True)
class TrainHyper:
    mu: float = 0.01
    local_epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.01
    optimizer: Literal["adam", "gd"] = "adam"

    def __post_init__(self):
        if self.mu < 0:
            raise ConfigurationError("mu must be non-negative")
        if self.local_epochs < 1:
            raise ConfigurationError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.optimizer not in ("adam", "gd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class ClientUpdate:
    client_id: Hashable
    delta: np.ndarray
    num_samples: int
    local_loss_final: float
    trained: np.ndarray | None = field(default=None, repr=False)


def unpack(params: np.ndarray, config: MlpConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into ``(W, b)`` views, one per layer."""
    if params.ndim != 1 or params.shape[0] != config.num_params:
        raise ConfigurationError(
            f"params length {params.shape[0] if params.ndim == 1 else params.shape} "
            f"does not match config ({config.num_params})"
        )
    layers = []
    offset = 0
    for fan_in, fan_out in config.layer_dims:
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_params(config: MlpConfig, rng: RngStream) -> np.ndarray:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    chunks = []
    for fan_in, fan_out in config.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _as_batch(config: MlpConfig, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != config.input_dim:
        raise ConfigurationError(f"feature dimension {z.shape[-1]} != input_dim {config.input_dim}")
    return z


def _labels(config: MlpConfig, y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ConfigurationError(f"{n} samples but {y.shape[0]} labels")
    if y.size and (y.min() < 0 or y.max() >= config.num_classes):
        raise UsageError(f"labels must lie in [0, {config.num_classes})")
    return y


def _forward(params, config, z, masks=None):
    """Return log-probabilities plus the activations needed for backprop."""
    layers = unpack(params, config)
    acts = [z]
    pre_acts = []
    h = z
    for idx, (w, b) in enumerate(layers):
        a = h @ w + b
        if idx == len(layers) - 1:
            break
        pre_acts.append(a)
        h = np.maximum(a, 0.0)
        if masks is not None:
            h = h * masks[idx]
        acts.append(h)
    shifted = a - a.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return log_probs, acts, pre_acts, layers


def _loss_and_grad(params, config, z, y, masks=None, need_grad=True):
    n = z.shape[0]
    if n == 0:
        raise UsageError("empty batch")
    log_probs, acts, pre_acts, layers = _forward(params, config, z, masks)
    loss = -float(log_probs[np.arange(n), y].sum()) / n
    if not need_grad:
        return loss, None
    delta = np.exp(log_probs)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = []
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        grads.append(delta.sum(axis=0))
        grads.append((acts[idx].T @ delta).reshape(-1))
        if idx == 0:
            break
        delta = delta @ w.T
        if masks is not None:
            delta = delta * masks[idx - 1]
        delta = delta * (pre_acts[idx - 1] > 0.0)
    return loss, np.concatenate(grads[::-1])


def forward(params: np.ndarray, config: MlpConfig, z) -> np.ndarray:
    """Class probabilities for one feature vector (1-D in, 1-D out) or a batch."""
    single = np.ndim(z) == 1
    log_probs = _forward(params, config, _as_batch(config, z))[0]
    probs = np.exp(log_probs)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs[0] if single else probs


def loss(params: np.ndarray, config: MlpConfig, z, y) -> float:
    """Mean cross-entropy of the batch ``(z, y)``."""
    z = _as_batch(config, z)
    return _loss_and_grad(params, config, z, _labels(config, y, z.shape[0]), need_grad=False)[0]


def grad(params: np.ndarray, config: MlpConfig, z, y) -> np.ndarray:
    z = _as_batch(config, z)
    return _loss_and_grad(params, config, z, _labels(config, y, z.shape[0]))[1]


def fedprox_loss(params, fog_params, mu: float, config: MlpConfig, z, y) -> float:
    """Cross-entropy plus ``mu/2 * ||params - fog_params||^2``."""
    check_same_length(params, fog_params, "params/fog_params")
    base = loss(params, config, z, y)
    if mu == 0:
        return base
    diff = params - fog_params
    return base + 0.5 * mu * float(diff @ diff)


def fedprox_grad(params, fog_params, mu: float, config: MlpConfig, z, y) -> np.ndarray:
    check_same_length(params, fog_params, "params/fog_params")
    g = grad(params, config, z, y)
    if mu == 0:
        return g
    return g + mu * (params - fog_params)


def proximal_pull(w: np.ndarray, anchor: np.ndarray, mu: float, lr: float, scale=1.0) -> np.ndarray:
    """Implicit step on ``mu/2 * ||w - anchor||^2`` after an optimizer step.

    Solves ``w' = argmin (scale/2lr)||w' - w||^2 + (mu/2)||w' - anchor||^2``
    per coordinate, i.e. ``(w + c*anchor) / (1 + c)`` with ``c = lr*mu/scale``.
    ``scale`` is 1 for gradient descent and Adam's ``sqrt(v_hat) + eps`` for
    Adam, so fixed points are exactly the stationary points of the FedProx
    objective.  Stable for any ``mu``; large ``mu`` collapses onto ``anchor``.
    """
    c = (lr * mu) / scale
    return (w + c * anchor) / (1.0 + c)


def _dropout_masks(config: MlpConfig, n: int, rng: RngStream) -> list[np.ndarray] | None:
    p = config.dropout_rate
    if p == 0.0:
        return None
    keep = 1.0 - p
    return [(rng.random((n, h)) < keep) / keep for h in config.hidden_dims]


def local_train(
    received: np.ndarray,
    fog_anchor: np.ndarray,
    config: MlpConfig,
    hyper: TrainHyper,
    z,
    y,
    rng: RngStream,
    client_id: Hashable = 0,
) -> ClientUpdate:
    """Mini-batch FedProx training from ``received``; returns the parameter delta.

    Each epoch reshuffles the data with ``rng`` and walks it in ``batch_size``
    chunks (last chunk may be short).  Every step applies the optimizer to
    the cross-entropy gradient and then treats the proximal term implicitly
    (see :func:`proximal_pull`); for ``optimizer="gd"`` that is proximal
    gradient descent on :func:`fedprox_loss`.  The optimizer state starts
    fresh each call.
    """
    check_same_length(received, fog_anchor, "received/fog_anchor")
    z = _as_batch(config, z)
    y = _labels(config, y, z.shape[0])
    n = z.shape[0]
    if n == 0:
        raise ProtocolError(f"client {client_id} has no training data")
    w = received.copy()
    adam = AdamState.fresh(w.size, hyper.learning_rate) if hyper.optimizer == "adam" else None
    for _ in range(hyper.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            masks = _dropout_masks(config, idx.size, rng)
            _, g = _loss_and_grad(w, config, z[idx], y[idx], masks)
            if adam is not None:
                w, adam = adam_step(w, g, adam)
                scale = np.sqrt(adam.second_moment / (1.0 - adam.beta2**adam.step_count)) + adam.epsilon
            else:
                w = gd_step(w, g, hyper.learning_rate)
                scale = 1.0
            if hyper.mu:
                w = proximal_pull(w, fog_anchor, hyper.mu, hyper.learning_rate, scale)
    if not np.all(np.isfinite(w)):
        raise NumericError(f"client {client_id} diverged to non-finite parameters")
    final_loss = _loss_and_grad(w, config, z, y, need_grad=False)[0]
    return ClientUpdate(client_id, w - received, n, final_loss, trained=w)


def predict_proba(params: np.ndarray, config: MlpConfig, z) -> np.ndarray:
    """Batch probabilities; alias of :func:`forward` that always returns 2-D."""
    return forward(params, config, _as_batch(config, z))
