"""Per-modality feature abstraction into a shared k-dimensional space.

Each modality gets a one-layer encoder ``z = act(x @ W + b)`` that maps its
raw dimension onto ``k``.  Encoders are fitted as the encoder half of an
autoencoder with a linear decoder and mean-squared reconstruction loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Literal

import numpy as np

from .errors import ConfigurationError, DataError, UsageError
from .numeric import AdamState, RngStream, adam_step

Activation = Literal["tanh", "identity"]


class ModalityKind(str, Enum):
    TELEMETRY = "telemetry"
    NETWORK_FLOW = "network_flow"
    SYSTEM_LOG_NUMERIC = "system_log_numeric"


@dataclass(frozen=True)
class ModalitySpec:
    modality_id: str
    raw_dim: int
    kind: ModalityKind = ModalityKind.TELEMETRY

    def __post_init__(self):
        if self.raw_dim < 1:
            raise ConfigurationError(f"modality {self.modality_id!r}: raw_dim must be >= 1")
        object.__setattr__(self, "kind", ModalityKind(self.kind))


@dataclass(frozen=True)
class EncoderParams:
    """Encoder weights ``W (raw_dim, k)`` then ``b (k)``, flattened.

    ``decoder`` (``(k, raw_dim)`` then ``(raw_dim)``) is kept from pretraining
    so the encoder can be fine-tuned later; ``encode`` never touches it.
    """

    modality_id: str
    raw_dim: int
    k: int
    weights: np.ndarray
    activation: Activation = "tanh"
    decoder: np.ndarray | None = None

    def __post_init__(self):
        if self.weights.shape != (self.raw_dim * self.k + self.k,):
            raise ConfigurationError("encoder weight vector has the wrong length")
        if self.activation not in ("tanh", "identity"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if not np.all(np.isfinite(self.weights)):
            raise ConfigurationError("encoder weights must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return self.weights[: self.raw_dim * self.k].reshape(self.raw_dim, self.k)

    @property
    def bias(self) -> np.ndarray:
        return self.weights[self.raw_dim * self.k :]


def _act(a: np.ndarray, activation: Activation) -> np.ndarray:
    return np.tanh(a) if activation == "tanh" else a


def encode(enc: EncoderParams, x) -> np.ndarray:
    """Map raw sample(s) of length ``raw_dim`` to length-``k`` features."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != enc.raw_dim:
        raise ConfigurationError(
            f"modality {enc.modality_id!r} expects raw_dim {enc.raw_dim}, got {batch.shape[-1]}"
        )
    bad_rows = np.flatnonzero(~np.isfinite(batch).all(axis=1))
    if bad_rows.size:
        raise DataError(f"sample {int(bad_rows[0])} contains non-finite values")
    z = _act(batch @ enc.matrix + enc.bias, enc.activation)
    return z[0] if single else z


def _split(theta: np.ndarray, d: int, k: int):
    n_enc = d * k + k
    w = theta[: d * k].reshape(d, k)
    b = theta[d * k : n_enc]
    wd = theta[n_enc : n_enc + k * d].reshape(k, d)
    bd = theta[n_enc + k * d :]
    return w, b, wd, bd


def reconstruction_loss_grad(
    theta: np.ndarray, x: np.ndarray, k: int, activation: Activation = "tanh", need_grad: bool = True
):
    """Mean squared reconstruction error of the autoencoder ``theta`` on ``x``.

    ``theta`` is encoder weights followed by decoder weights.  Returns
    ``(loss, grad)``; ``grad`` is None when ``need_grad`` is false.
    """
    n, d = x.shape
    w, b, wd, bd = _split(theta, d, k)
    z = _act(x @ w + b, activation)
    resid = z @ wd + bd - x
    loss = float((resid * resid).sum()) / (n * d)
    if not need_grad:
        return loss, None
    d_out = 2.0 * resid / (n * d)
    g_wd = z.T @ d_out
    g_bd = d_out.sum(axis=0)
    d_z = d_out @ wd.T
    if activation == "tanh":
        d_z = d_z * (1.0 - z * z)
    g_w = x.T @ d_z
    g_b = d_z.sum(axis=0)
    return loss, np.concatenate([g_w.ravel(), g_b, g_wd.ravel(), g_bd])


def _as_data(x, raw_dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise UsageError("encoder training data must be a non-empty 2-D array")
    if raw_dim is not None and x.shape[1] != raw_dim:
        raise ConfigurationError(f"expected raw_dim {raw_dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise DataError("encoder training data contains non-finite values")
    return x


def pretrain_encoder(
    modality: ModalitySpec,
    data,
    k: int = 64,
    epochs: int = 100,
    rng: RngStream | None = None,
    *,
    activation: Activation = "tanh",
    learning_rate: float = 0.01,
    batch_size: int = 32,
) -> EncoderParams:
    """Fit an autoencoder on a representative sample and keep its encoder.

    The parameters returned are the best seen on the full sample (checked at
    entry and after every epoch), so the exit loss never exceeds the entry loss.
    """
    x = _as_data(data, modality.raw_dim)
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    rng = rng or RngStream(0)
    d = modality.raw_dim
    theta = np.concatenate(
        [
            rng.uniform(-1 / np.sqrt(d), 1 / np.sqrt(d), d * k),
            np.zeros(k),
            rng.uniform(-1 / np.sqrt(k), 1 / np.sqrt(k), k * d),
            np.zeros(d),
        ]
    )
    best_loss = reconstruction_loss_grad(theta, x, k, activation, need_grad=False)[0]
    best = theta.copy()
    state = AdamState.fresh(theta.size, learning_rate)
    n = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, g = reconstruction_loss_grad(theta, x[idx], k, activation)
            theta, state = adam_step(theta, g, state)
        cur = reconstruction_loss_grad(theta, x, k, activation, need_grad=False)[0]
        if cur <= best_loss:
            best_loss, best = cur, theta.copy()
    n_enc = d * k + k
    return EncoderParams(modality.modality_id, d, k, best[:n_enc], activation, best[n_enc:])


def finetune_encoder(
    enc: EncoderParams,
    local_shots,
    steps: int = 10,
    rng: RngStream | None = None,
    *,
    learning_rate: float = 1e-3,
) -> EncoderParams:
    """A few full-batch Adam steps on the client's own shots.

    Like pretraining, a step is only kept if it does not raise the
    reconstruction loss on the shots.  ``rng`` is accepted for interface
    symmetry; full-batch steps draw nothing from it.
    """
    if steps <= 0:
        return enc
    shots = np.asarray(local_shots, dtype=np.float64)
    if shots.size == 0:
        warnings.warn(f"no fine-tuning shots for modality {enc.modality_id!r}; encoder unchanged")
        return enc
    if enc.decoder is None:
        raise ConfigurationError("fine-tuning needs the decoder kept from pretraining")
    x = _as_data(shots, enc.raw_dim)
    theta = np.concatenate([enc.weights, enc.decoder])
    best_loss = reconstruction_loss_grad(theta, x, enc.k, enc.activation, need_grad=False)[0]
    best = theta
    state = AdamState.fresh(theta.size, learning_rate)
    for _ in range(steps):
        _, g = reconstruction_loss_grad(theta, x, enc.k, enc.activation)
        theta, state = adam_step(theta, g, state)
        cur = reconstruction_loss_grad(theta, x, enc.k, enc.activation, need_grad=False)[0]
        if cur <= best_loss:
            best_loss, best = cur, theta
    n_enc = enc.weights.size
    return replace(enc, weights=best[:n_enc].copy(), decoder=best[n_enc:].copy())
