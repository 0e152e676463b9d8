"""Seeded random streams, the Adam optimizer and a finite-difference oracle.

Parameter vectors are plain 1-D ``float64`` numpy arrays.  Everything here is
deterministic: the same inputs give bitwise-identical outputs.

Random streams use numpy's Philox counter-based generator keyed through a
``SeedSequence([seed, stream_id])``.  The platform default generator is never
used, so a given ``(seed, stream_id)`` pair replays the same draws on every
machine running the same numpy release.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericError

_U64 = (1 << 64) - 1


def derive_seed(base: int, *labels: object) -> int:
    """Hash ``base`` and ``labels`` into a 64-bit unsigned integer.

    blake2b over the ``/``-joined decimal/str form; used for per-client and
    per-sweep-cell stream ids so that derivations are stable across runs.
    """
    text = "/".join([str(int(base) & _U64), *(str(label) for label in labels)])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    The stream owns a Philox generator and advances as draws are taken.
    Give every concurrent worker its own stream via :meth:`derive`.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ConfigurationError("seed and stream_id must be non-negative")
        self.seed = int(seed) & _U64
        self.stream_id = int(stream_id) & _U64
        seq = np.random.SeedSequence([self.seed, self.stream_id])
        self.generator = np.random.Generator(np.random.Philox(seq))

    def derive(self, *labels: object) -> "RngStream":
        """Independent child stream; does not advance ``self``."""
        return RngStream(self.seed, derive_seed(self.stream_id, *labels))

    def gaussian(self, n: int) -> np.ndarray:
        return self.generator.standard_normal(n)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def random(self, size) -> np.ndarray:
        return self.generator.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def dirichlet(self, alpha: np.ndarray) -> np.ndarray:
        return self.generator.dirichlet(alpha)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def rng_draw_gaussian(stream: RngStream, n: int) -> np.ndarray:
    """Draw ``n`` standard-normal values, advancing ``stream``."""
    if n < 0:
        raise ConfigurationError(f"n must be >= 0, got {n}")
    return stream.gaussian(n)


def as_param_vector(values, name: str = "params") -> np.ndarray:
    """Validate and return ``values`` as a finite 1-D float64 array (copied)."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ConfigurationError(f"{name} must be non-empty")
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NumericError(f"{name} has non-finite entry at index {int(bad[0])}")
    return arr


def check_same_length(a: np.ndarray, b: np.ndarray, what: str = "vectors") -> None:
    if a.shape != b.shape:
        raise ConfigurationError(f"{what} length mismatch: {a.shape[0]} vs {b.shape[0]}")


def _check_finite(arr: np.ndarray, name: str) -> None:
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NumericError(f"{name} has non-finite entry at index {int(bad[0])}")


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, size: int, learning_rate: float = 0.01, **kwargs) -> "AdamState":
        if learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        return cls(np.zeros(size), np.zeros(size), 0, learning_rate, **kwargs)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    check_same_length(params, grad, "params/grad")
    check_same_length(params, state.first_moment, "params/adam state")
    _check_finite(grad, "grad")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)


def gd_step(params: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
    check_same_length(params, grad, "params/grad")
    _check_finite(grad, "grad")
    return params - learning_rate * grad


def finite_diff_grad(f: Callable[[np.ndarray], float], w: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``w``."""
    if not 1e-7 <= h <= 1e-3:
        raise ConfigurationError(f"step h={h} outside [1e-7, 1e-3]")
    w = np.asarray(w, dtype=np.float64)
    out = np.empty_like(w)
    probe = w.copy()
    for j in range(w.size):
        orig = probe[j]
        probe[j] = orig + h
        up = float(f(probe))
        probe[j] = orig - h
        down = float(f(probe))
        probe[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"f is not finite around coordinate {j}")
        out[j] = (up - down) / (2.0 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``‖a-b‖ / max(‖a‖, ‖b‖, floor)``; the gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / denom
