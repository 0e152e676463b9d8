"""Synchronous federated rounds over the Mist/Edge/Fog/Cloud hierarchy.

:func:`prepare` builds the data, encoders and initial model; :func:`run_round`
performs one Cloud -> Fog -> Edge -> Mist -> Edge -> Fog -> Cloud cycle;
:func:`run_experiment` and :func:`run_sweep` drive whole runs.

Reports serialize deterministically: wall-clock times are kept in a
separate ``timing`` field and left out of the default JSON.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .data import (
    ClientDataset,
    CsvSchema,
    PartitionConfig,
    PooledDataset,
    data_quality,
    generate_synthetic,
    load_csv,
    merge_pools,
    partition_non_iid,
    scale_clients,
)
from .encoder import EncoderParams, ModalitySpec, encode, finetune_encoder, pretrain_encoder
from .errors import NoEligibleClientsError, UsageError
from .hierarchy import (
    ClientMetadata,
    CloudState,
    Topology,
    cloud_consolidate,
    disseminate,
    fog_aggregate,
    mist_anomaly_flag,
    select_clients,
)
from .metrics import Curve, classification_metrics, macro_ovr_auc, model_drift, pr_auc, roc_auc
from .model import ClientUpdate, MlpConfig, init_params, local_train, predict_proba
from .numeric import RngStream, derive_seed

log = logging.getLogger(__name__)

CLIENTS_GRID = tuple(range(10, 101, 10))
ROUNDS_GRID = (50, 100, 150, 200)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("MISTFED_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class ClientRuntime:
    dataset: ClientDataset
    encoder: EncoderParams
    z_train: np.ndarray
    z_val: np.ndarray
    meta: ClientMetadata


@dataclass
class ExperimentState:
    config: ExperimentConfig
    mlp: MlpConfig
    topology: Topology
    clients: dict[int, ClientRuntime]
    encoders: dict[str, EncoderParams]
    cloud: CloudState
    rng: RngStream
    val_z: np.ndarray
    val_y: np.ndarray
    label_mapping: dict[str, int]
    round_index: int = 0
    best_accuracy: float | None = None


@dataclass
class EvalResult:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float | None
    pr_auc: float | None
    roc: Curve | None = None
    pr: Curve | None = None

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in ("accuracy", "precision", "recall", "f1", "roc_auc", "pr_auc")}


@dataclass
class RoundReport:
    round: int
    skipped: bool
    active_clients: list[int]
    client_losses: dict[str, float]
    cloud_version: int
    model_digest: str
    metrics: dict[str, Any] | None
    best_accuracy: float | None
    drift: dict[str, Any] | None
    anomaly_flags: dict[str, int]
    wall_time_s: float = 0.0
    curves: EvalResult | None = field(default=None, repr=False)

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out = {
            "round": self.round,
            "skipped": self.skipped,
            "active_clients": self.active_clients,
            "client_losses": self.client_losses,
            "cloud_version": self.cloud_version,
            "model_digest": self.model_digest,
            "metrics": self.metrics,
            "best_accuracy": self.best_accuracy,
            "drift": self.drift,
            "anomaly_flags": self.anomaly_flags,
        }
        if include_timing:
            out["wall_time_s"] = self.wall_time_s
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, allow_nan=False)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list[RoundReport]
    state: ExperimentState
    wall_time_s: float

    @property
    def final_model(self) -> np.ndarray:
        return self.state.cloud.global_model

    def summary(self) -> dict[str, Any]:
        evaluated = [r for r in self.reports if r.metrics is not None]
        last = evaluated[-1] if evaluated else None
        drifted = [r for r in self.reports if r.drift is not None]
        return {
            "rounds_completed": sum(not r.skipped for r in self.reports),
            "rounds_skipped": sum(r.skipped for r in self.reports),
            "cloud_version": self.state.cloud.version,
            "final_metrics": last.metrics if last else None,
            "final_round_evaluated": last.round if last else None,
            "best_accuracy": self.state.best_accuracy,
            "final_mean_drift": drifted[-1].drift["mean"] if drifted else None,
            "model_digest": self.state.cloud.digest,
        }

    def write_jsonl(self, path, include_timing: bool = False) -> None:
        with open(path, "w") as fh:
            for r in self.reports:
                fh.write(r.to_json(include_timing) + "\n")


# --- setup -----------------------------------------------------------------


def load_pool(config: ExperimentConfig, rng: RngStream) -> PooledDataset:
    data = config.data
    if data.source == "synthetic":
        specs = [ModalitySpec(m.modality_id, m.raw_dim, m.kind) for m in data.modalities]
        return generate_synthetic(
            specs,
            data.samples_per_modality,
            data.num_classes,
            data.class_separation,
            rng.derive("data"),
            corruption_rate=data.corruption_rate,
        )
    parts = []
    offset = 0
    for src in data.csv:
        part = load_csv(src.path, CsvSchema.from_file(src.schema), modality_id=src.modality_id, kind=src.kind, id_offset=offset)
        offset += len(part)
        parts.append(part)
    return merge_pools(parts)


def representative_sample(x: np.ndarray, fraction: float, cap: int, rng: RngStream) -> np.ndarray:
    """``fraction`` of the rows (at least one, at most ``cap``), drawn without replacement."""
    m = min(cap, max(1, int(round(fraction * x.shape[0]))), x.shape[0])
    idx = np.sort(rng.permutation(x.shape[0])[:m])
    return x[idx]


def prepare(config: ExperimentConfig) -> ExperimentState:
    """Generate/ingest data, partition it, pretrain encoders and init the model."""
    root = RngStream(config.seed)
    pooled = load_pool(config, root)
    part_cfg = PartitionConfig(config.num_clients, config.partition.skew_mode, config.partition.dirichlet_alpha, config.seed)
    clients = partition_non_iid(pooled, part_cfg, root.derive("partition"))
    if config.data.per_client_scaling:
        clients = scale_clients(clients)

    enc_cfg = config.encoder
    encoders: dict[str, EncoderParams] = {}
    for spec in pooled.modalities:
        owned = [c.train.x for c in clients if c.modality.modality_id == spec.modality_id and len(c.train)]
        if not owned:
            raise UsageError(f"no training data for modality {spec.modality_id!r}")
        sample = representative_sample(
            np.concatenate(owned), enc_cfg.pretrain_fraction, enc_cfg.pretrain_cap, root.derive("representative", spec.modality_id)
        )
        encoders[spec.modality_id] = pretrain_encoder(
            spec,
            sample,
            enc_cfg.k,
            enc_cfg.pretrain_epochs,
            root.derive("encoder", spec.modality_id),
            activation=enc_cfg.activation,
            learning_rate=enc_cfg.learning_rate,
        )

    runtimes: dict[int, ClientRuntime] = {}
    for c in clients:
        enc = encoders[c.modality.modality_id]
        if enc_cfg.finetune and len(c.train):
            shot_rng = root.derive("shots", c.client_id)
            shots = c.train.x[np.sort(shot_rng.permutation(len(c.train))[: enc_cfg.finetune_shots])]
            enc = finetune_encoder(enc, shots, enc_cfg.finetune_steps, shot_rng)
        z_train = encode(enc, c.train.x) if len(c.train) else np.empty((0, enc_cfg.k))
        z_val = encode(enc, c.validation.x) if len(c.validation) else np.empty((0, enc_cfg.k))
        meta = ClientMetadata(c.client_id, c.n_i, data_quality(c, config.evaluation.quality_bins))
        runtimes[c.client_id] = ClientRuntime(c, enc, z_train, z_val, meta)

    mlp = MlpConfig(enc_cfg.k, config.model.hidden_dims, pooled.num_classes, config.model.dropout_rate)
    topology = Topology.build(config.num_clients, config.topology.clients_per_edge, config.topology.edges_per_fog)
    init = init_params(mlp, root.derive("init"))
    order = sorted(runtimes)
    val_z = np.concatenate([runtimes[c].z_val for c in order])
    val_y = np.concatenate([runtimes[c].dataset.validation.y for c in order])
    return ExperimentState(
        config, mlp, topology, runtimes, encoders, CloudState(init), root, val_z, val_y, dict(pooled.label_mapping)
    )


# --- evaluation ------------------------------------------------------------


def evaluate(params: np.ndarray, mlp: MlpConfig, z: np.ndarray, y: np.ndarray) -> EvalResult | None:
    """Score the model on ``(z, y)``; attack probability is ``1 - P(normal)``."""
    if y.size == 0:
        return None
    probs = predict_proba(params, mlp, z)
    pred = probs.argmax(axis=1)
    cm = classification_metrics(pred, y, positive_class=1, num_classes=mlp.num_classes)
    attack_score = 1.0 - probs[:, 0]
    is_attack = y != 0
    roc = pr = None
    roc_value = pr_value = None
    if is_attack.any() and not is_attack.all():
        roc = roc_auc(attack_score, is_attack)
        pr = pr_auc(attack_score, is_attack)
        if mlp.num_classes == 2:
            roc_value, pr_value = roc.auc, pr.auc
        else:
            roc_value = macro_ovr_auc(probs, y, "roc")
            pr_value = macro_ovr_auc(probs, y, "pr")
    return EvalResult(cm.accuracy, cm.precision, cm.recall, cm.f1, roc_value, pr_value, roc, pr)


# --- rounds ----------------------------------------------------------------


def _select_active(state: ExperimentState) -> list[int]:
    sel = state.config.selection
    active: list[int] = []
    for edge in state.topology.edge_ids:
        metas = [state.clients[c].meta for c in state.topology.clients_of_edge(edge)]
        try:
            active.extend(select_clients(metas, sel))
        except NoEligibleClientsError:
            log.info("round %d: edge %d has no eligible clients", state.round_index + 1, edge)
    return sorted(active)


def _train_clients(state: ExperimentState, copies: dict[int, np.ndarray], anchor: np.ndarray, t: int, workers: int):
    def job(cid: int) -> ClientUpdate:
        rt = state.clients[cid]
        return local_train(
            copies[cid], anchor, state.mlp, state.config.train,
            rt.z_train, rt.dataset.train.y, state.rng.derive("train", t, cid), cid,
        )

    ids = sorted(copies)
    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            updates = list(pool.map(job, ids))
    else:
        updates = [job(cid) for cid in ids]
    return {u.client_id: u for u in updates}


def run_round(state: ExperimentState, config: ExperimentConfig | None = None, workers: int | None = None):
    """Run one synchronous round; returns ``(state, report)``.

    ``state`` is advanced in place.  A round in which no Edge admits any
    client is reported as skipped and leaves the global model untouched.
    """
    config = config or state.config
    workers = workers or default_workers()
    started = time.perf_counter()
    t = state.round_index + 1
    active = _select_active(state)
    if not active:
        state.round_index = t
        report = RoundReport(
            t, True, [], {}, state.cloud.version, state.cloud.digest, None, state.best_accuracy, None,
            {"flagged": 0, "flagged_attacks": 0, "inspected": 0}, time.perf_counter() - started,
        )
        return state, report

    anchor = state.cloud.global_model.copy()
    copies = disseminate(state.cloud, state.topology, active)

    flagged = flagged_attacks = inspected = 0
    threshold = config.evaluation.anomaly_threshold
    for cid in active:
        rt = state.clients[cid]
        if rt.z_val.shape[0]:
            flags, _ = mist_anomaly_flag(copies[cid], state.mlp, rt.z_val, threshold)
            flagged += int(flags.sum())
            flagged_attacks += int((flags & (rt.dataset.validation.y != 0)).sum())
            inspected += int(flags.size)

    updates = _train_clients(state, copies, anchor, t, workers)

    fog_models = []
    for fog in state.topology.fog_ids:
        fog_updates = [u for cid, u in updates.items() if state.topology.fog_of_client(cid) == fog]
        if not fog_updates:
            continue
        fog_models.append((fog, fog_aggregate(fog_updates, anchor), sum(u.num_samples for u in fog_updates)))
    state.cloud = cloud_consolidate(fog_models, state.cloud, t, config.cloud_weighting)

    for cid in active:
        state.clients[cid].meta.mark_selected(t)
    drift = model_drift([anchor + updates[c].delta for c in active], anchor)

    ev = None
    if t % config.evaluation.every == 0 or t == config.num_rounds:
        ev = evaluate(state.cloud.global_model, state.mlp, state.val_z, state.val_y)
    if ev is not None:
        state.best_accuracy = ev.accuracy if state.best_accuracy is None else max(state.best_accuracy, ev.accuracy)
    state.round_index = t

    report = RoundReport(
        round=t,
        skipped=False,
        active_clients=active,
        client_losses={str(c): updates[c].local_loss_final for c in active},
        cloud_version=state.cloud.version,
        model_digest=state.cloud.digest,
        metrics=ev.to_dict() if ev else None,
        best_accuracy=state.best_accuracy,
        drift={"per_client": dict(zip(map(str, active), drift.per_client_drift)), "mean": drift.mean, "median": drift.median},
        anomaly_flags={"flagged": flagged, "flagged_attacks": flagged_attacks, "inspected": inspected},
        wall_time_s=time.perf_counter() - started,
        curves=ev,
    )
    return state, report


def run_experiment(
    config: ExperimentConfig,
    on_round: Callable[[RoundReport], None] | None = None,
    workers: int | None = None,
) -> ExperimentResult:
    """Prepare and run ``config.num_rounds`` rounds."""
    started = time.perf_counter()
    state = prepare(config)
    reports = []
    for _ in range(config.num_rounds):
        state, report = run_round(state, config, workers)
        reports.append(report)
        if on_round is not None:
            on_round(report)
    return ExperimentResult(config, reports, state, time.perf_counter() - started)


# --- sweeps ----------------------------------------------------------------


def cell_seed(base_seed: int, clients: int, rounds: int) -> int:
    """Seed for one sweep cell: ``derive_seed(base, "cell", clients, rounds)`` folded to 63 bits."""
    return derive_seed(base_seed, "cell", clients, rounds) >> 1


@dataclass
class SweepCell:
    clients: int
    rounds: int
    seed: int
    status: str
    summary: dict[str, Any] | None
    error: str | None = None
    wall_time_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out = {k: v for k, v in asdict(self).items() if k != "wall_time_s"}
        if include_timing:
            out["wall_time_s"] = self.wall_time_s
        return out


@dataclass
class SweepReport:
    clients_grid: list[int]
    rounds_grid: list[int]
    base_config: dict[str, Any]
    cells: list[SweepCell]
    wall_time_s: float = 0.0

    def cell(self, clients: int, rounds: int) -> SweepCell:
        return next(c for c in self.cells if c.clients == clients and c.rounds == rounds)

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out = {
            "code_version": __version__,
            "axes": {"clients": self.clients_grid, "rounds": self.rounds_grid},
            "base_config": self.base_config,
            "cells": [c.to_dict(include_timing) for c in self.cells],
        }
        if include_timing:
            out["wall_time_s"] = self.wall_time_s
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2, allow_nan=False)


def _run_cell(args: tuple[ExperimentConfig, int, int]) -> SweepCell:
    base, clients, rounds = args
    seed = cell_seed(base.seed, clients, rounds)
    started = time.perf_counter()
    try:
        cfg = base.replace(num_clients=clients, num_rounds=rounds, seed=seed)
        result = run_experiment(cfg, workers=1)
        return SweepCell(clients, rounds, seed, "ok", result.summary(), None, time.perf_counter() - started)
    except Exception as exc:  # a failing cell must not abort the sweep
        log.exception("sweep cell clients=%d rounds=%d failed", clients, rounds)
        return SweepCell(clients, rounds, seed, "failed", None, f"{type(exc).__name__}: {exc}", time.perf_counter() - started)


def run_sweep(
    base: ExperimentConfig,
    clients_grid: Sequence[int] = CLIENTS_GRID,
    rounds_grid: Sequence[int] = ROUNDS_GRID,
    workers: int | None = None,
) -> SweepReport:
    """One independent experiment per ``(clients, rounds)`` cell, row-major."""
    if not clients_grid or not rounds_grid:
        raise UsageError("sweep grids must be non-empty")
    workers = workers or default_workers()
    started = time.perf_counter()
    jobs = [(base, c, r) for c in clients_grid for r in rounds_grid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]
    return SweepReport(list(clients_grid), list(rounds_grid), base.to_dict(), cells, time.perf_counter() - started)

