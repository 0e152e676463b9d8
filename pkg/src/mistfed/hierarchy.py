"""Protocol roles of the Mist/Edge/Fog/Cloud hierarchy.

Edge nodes filter and rank clients, Fog nodes average client models weighted
by sample count, and the Cloud merges Fog models into a versioned global
model.  Reductions always run in ascending id order so results are bitwise
reproducible regardless of how updates were collected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigurationError, NoEligibleClientsError, ProtocolError
from .model import ClientUpdate, MlpConfig, forward


@dataclass(frozen=True)
class Topology:
    client_to_edge: dict[int, int]
    edge_to_fog: dict[int, int]

    def __post_init__(self):
        missing = {e for e in self.client_to_edge.values() if e not in self.edge_to_fog}
        if missing:
            raise ConfigurationError(f"edges {sorted(missing)} have no fog")
        if not self.client_to_edge:
            raise ConfigurationError("topology has no clients")

    @classmethod
    def build(cls, num_clients: int, clients_per_edge: int = 5, edges_per_fog: int = 2) -> "Topology":
        """Fill edges and fogs in ascending client-id order."""
        if num_clients < 1 or clients_per_edge < 1 or edges_per_fog < 1:
            raise ConfigurationError("topology sizes must be positive")
        c2e = {c: c // clients_per_edge for c in range(num_clients)}
        e2f = {e: e // edges_per_fog for e in sorted(set(c2e.values()))}
        return cls(c2e, e2f)

    @property
    def fog_ids(self) -> list[int]:
        return sorted(set(self.edge_to_fog.values()))

    @property
    def edge_ids(self) -> list[int]:
        return sorted(self.edge_to_fog)

    def clients_of_edge(self, edge: int) -> list[int]:
        return sorted(c for c, e in self.client_to_edge.items() if e == edge)

    def edges_of_fog(self, fog: int) -> list[int]:
        return sorted(e for e, f in self.edge_to_fog.items() if f == fog)

    def fog_of_client(self, client: int) -> int:
        return self.edge_to_fog[self.client_to_edge[client]]


@dataclass
class ClientMetadata:
    client_id: int
    n_i: int
    q_i: float
    rounds_participated: int = 0
    last_selected_round: int | None = None

    def mark_selected(self, round_index: int) -> None:
        self.rounds_participated += 1
        self.last_selected_round = round_index


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = 0.01
    beta: float = 1.0
    tau_n: int = 1
    tau_q: float = 0.0
    top_m: int | Literal["all"] = "all"
    enabled: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be non-negative")
        if self.enabled and self.alpha + self.beta <= 0:
            raise ConfigurationError("alpha + beta must be positive when selection is enabled")
        if not 0.0 <= self.tau_q <= 1.0:
            raise ConfigurationError("tau_q must lie in [0, 1]")
        if self.top_m != "all" and (not isinstance(self.top_m, int) or self.top_m < 1):
            raise ConfigurationError("top_m must be a positive integer or 'all'")


def utility_score(meta: ClientMetadata, sel: SelectionConfig) -> float:
    return sel.alpha * meta.n_i + sel.beta * meta.q_i


def select_clients(metas: Sequence[ClientMetadata], sel: SelectionConfig) -> list[int]:
    """Threshold filter, then rank by utility (ties: lower id first), then truncate.

    With selection disabled every client is returned in id order.
    """
    if not metas:
        raise ProtocolError("select_clients needs at least one client")
    if not sel.enabled:
        return sorted(m.client_id for m in metas)
    eligible = [m for m in metas if m.n_i >= sel.tau_n and m.q_i >= sel.tau_q]
    if not eligible:
        raise NoEligibleClientsError()
    ranked = sorted(eligible, key=lambda m: (-utility_score(m, sel), m.client_id))
    if sel.top_m != "all":
        ranked = ranked[: sel.top_m]
    return [m.client_id for m in ranked]


def aggregation_weights(updates: Sequence[ClientUpdate]) -> dict:
    """``n_i / sum(n_j)`` per client id, in ascending id order."""
    total = sum(u.num_samples for u in updates)
    if total <= 0:
        raise ProtocolError("aggregation over zero samples")
    return {u.client_id: u.num_samples / total for u in sorted(updates, key=lambda u: u.client_id)}


def fog_aggregate(updates: Sequence[ClientUpdate], fog_model: np.ndarray) -> np.ndarray:
    """Sample-weighted mean of the client models ``fog_model + delta_i``."""
    if not updates:
        raise ProtocolError("fog_aggregate needs at least one update")
    for u in updates:
        if u.delta.shape != fog_model.shape:
            raise ProtocolError(f"client {u.client_id} delta length {u.delta.shape[0]} != {fog_model.shape[0]}")
    weights = aggregation_weights(updates)
    by_id = {u.client_id: u for u in updates}
    out = np.zeros_like(fog_model)
    for cid, wt in weights.items():
        out += wt * (fog_model + by_id[cid].delta)
    return out


def model_digest(params: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(params, dtype="<f8").tobytes()).hexdigest()


@dataclass
class CloudState:
    global_model: np.ndarray
    version: int = 0
    history: list[tuple[int, int, str]] = field(default_factory=list)

    @property
    def digest(self) -> str:
        return model_digest(self.global_model)


def cloud_consolidate(
    fog_models: Sequence[tuple[int, np.ndarray, int]],
    state: CloudState,
    round_index: int = 0,
    weighting: Literal["samples", "uniform"] = "samples",
) -> CloudState:
    """Merge ``(fog_id, model, samples_under_fog)`` triples into a new version.

    Computed as ``M_0 + sum_f w_f (M_f - M_0)`` with ``M_0`` the lowest fog id,
    so identical fog models reproduce that model exactly.
    """
    if not fog_models:
        raise ProtocolError("cloud_consolidate needs at least one fog model")
    ordered = sorted(fog_models, key=lambda t: t[0])
    ref = ordered[0][1]
    for fid, m, _ in ordered:
        if m.shape != ref.shape or m.shape != state.global_model.shape:
            raise ProtocolError(f"fog {fid} model length mismatch")
    if weighting == "samples":
        total = sum(n for _, _, n in ordered)
        if total <= 0:
            raise ProtocolError("fogs carry zero samples")
        weights = [n / total for _, _, n in ordered]
    elif weighting == "uniform":
        weights = [1.0 / len(ordered)] * len(ordered)
    else:
        raise ConfigurationError(f"unknown cloud weighting {weighting!r}")
    merged = ref.copy()
    for (_, m, _), wt in zip(ordered, weights):
        merged += wt * (m - ref)
    version = state.version + 1
    history = [*state.history, (version, round_index, model_digest(merged))]
    return CloudState(merged, version, history)


def disseminate(state: CloudState, topology: Topology, selected: Sequence[int] | None = None) -> dict[int, np.ndarray]:
    """One copy of the global model per selected client (all clients if None)."""
    targets = sorted(topology.client_to_edge) if selected is None else sorted(selected)
    return {c: state.global_model.copy() for c in targets}


def mist_anomaly_flag(model: np.ndarray, config: MlpConfig, z, threshold: float = 0.9):
    """Flag samples whose attack probability ``1 - P(normal)`` reaches ``threshold``.

    For one feature vector returns ``(flag, probability)``; for a batch,
    two arrays.
    """
    probs = forward(model, config, z)
    attack = 1.0 - probs[..., 0]
    if attack.ndim == 0:
        return bool(attack >= threshold), float(attack)
    return attack >= threshold, attack
