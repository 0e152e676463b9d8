"""Experiment configuration: dataclass sections loaded from one JSON document.

Top-level keys are ``seed``, ``num_clients``, ``num_rounds``,
``cloud_weighting`` and the sections listed in :data:`SECTIONS`.  Unknown
keys and wrongly-typed values raise :class:`ConfigurationError`.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from .data import PartitionConfig
from .errors import ConfigurationError
from .hierarchy import SelectionConfig
from .model import TrainHyper


@dataclass(frozen=True)
class TopologyConfig:
    clients_per_edge: int = 5
    edges_per_fog: int = 2

    def __post_init__(self):
        if self.clients_per_edge < 1 or self.edges_per_fog < 1:
            raise ConfigurationError("topology fan-outs must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple[int, ...] = (64, 32)
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if not self.hidden_dims or any(int(h) < 1 for h in self.hidden_dims):
            raise ConfigurationError("hidden_dims must be non-empty positive widths")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")


@dataclass(frozen=True)
class PartitionSection:
    skew_mode: Literal["by_source_type", "dirichlet"] = "dirichlet"
    dirichlet_alpha: float = 0.3

    def __post_init__(self):
        PartitionConfig(1, self.skew_mode, self.dirichlet_alpha)


@dataclass(frozen=True)
class ModalityEntry:
    modality_id: str
    raw_dim: int
    kind: str = "telemetry"


@dataclass(frozen=True)
class CsvSource:
    path: str
    schema: str
    modality_id: str
    kind: str = "network_flow"


@dataclass(frozen=True)
class DataConfig:
    source: Literal["synthetic", "csv"] = "synthetic"
    modalities: tuple[ModalityEntry, ...] = (
        ModalityEntry("telemetry", 8, "telemetry"),
        ModalityEntry("network_flow", 16, "network_flow"),
        ModalityEntry("system_log", 12, "system_log_numeric"),
    )
    samples_per_modality: int = 2000
    num_classes: int = 2
    class_separation: float = 4.0
    corruption_rate: float = 0.02
    csv: tuple[CsvSource, ...] = ()
    per_client_scaling: bool = False

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(_coerce(ModalityEntry, m, "data.modalities") for m in self.modalities))
        object.__setattr__(self, "csv", tuple(_coerce(CsvSource, c, "data.csv") for c in self.csv))
        if self.source not in ("synthetic", "csv"):
            raise ConfigurationError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.csv:
            raise ConfigurationError("data.source is 'csv' but data.csv lists no files")
        if self.source == "synthetic" and not self.modalities:
            raise ConfigurationError("synthetic data needs at least one modality")
        if self.samples_per_modality < self.num_classes or self.num_classes < 2:
            raise ConfigurationError("need num_classes >= 2 and samples_per_modality >= num_classes")
        if self.class_separation < 0 or not 0.0 <= self.corruption_rate <= 1.0:
            raise ConfigurationError("class_separation >= 0 and corruption_rate in [0, 1] required")


@dataclass(frozen=True)
class EncoderConfig:
    k: int = 64
    pretrain_fraction: float = 0.05
    pretrain_cap: int = 500
    pretrain_epochs: int = 100
    learning_rate: float = 0.01
    activation: Literal["tanh", "identity"] = "tanh"
    finetune: bool = False
    finetune_steps: int = 10
    finetune_shots: int = 16

    def __post_init__(self):
        if self.k < 1 or self.pretrain_cap < 1 or self.pretrain_epochs < 0:
            raise ConfigurationError("encoder k, pretrain_cap must be >= 1 and pretrain_epochs >= 0")
        if not 0.0 < self.pretrain_fraction <= 1.0:
            raise ConfigurationError("pretrain_fraction must lie in (0, 1]")
        if self.activation not in ("tanh", "identity"):
            raise ConfigurationError(f"unknown encoder activation {self.activation!r}")


@dataclass(frozen=True)
class EvalConfig:
    every: int = 1
    anomaly_threshold: float = 0.9
    quality_bins: int = 16

    def __post_init__(self):
        if self.every < 1:
            raise ConfigurationError("evaluation.every must be >= 1")
        if not 0.0 <= self.anomaly_threshold <= 1.0:
            raise ConfigurationError("anomaly_threshold must lie in [0, 1]")
        if self.quality_bins < 2:
            raise ConfigurationError("quality_bins must be >= 2")


SECTIONS: dict[str, type] = {
    "topology": TopologyConfig,
    "train": TrainHyper,
    "model": ModelConfig,
    "selection": SelectionConfig,
    "partition": PartitionSection,
    "data": DataConfig,
    "encoder": EncoderConfig,
    "evaluation": EvalConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 7
    num_clients: int = 10
    num_rounds: int = 50
    cloud_weighting: Literal["samples", "uniform"] = "samples"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    model: ModelConfig = field(default_factory=ModelConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    partition: PartitionSection = field(default_factory=PartitionSection)
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be >= 1")
        if self.num_rounds < 0:
            raise ConfigurationError("num_rounds must be >= 0")
        if self.cloud_weighting not in ("samples", "uniform"):
            raise ConfigurationError(f"unknown cloud_weighting {self.cloud_weighting!r}")

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(dataclasses.asdict(self))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        return _coerce(cls, raw, "config")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config {path} must be a JSON object")
        return cls.from_dict(raw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


_NESTED = {**SECTIONS}


def _check_type(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _coerce(cls, raw, where: str):
    if dataclasses.is_dataclass(raw) and isinstance(raw, cls):
        return raw
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where}: expected an object, got {raw!r}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in raw.items():
        f = fields[name]
        sub = f"{where}.{name}"
        if cls is ExperimentConfig and name in _NESTED:
            kwargs[name] = _coerce(_NESTED[name], value, sub)
            continue
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:
            default = f.default_factory()
        else:
            default = None
        kwargs[name] = value if default is None or name == "top_m" else _check_type(value, default, sub)
    try:
        return cls(**kwargs)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def apply_override(raw: dict[str, Any], dotted: str, value: Any) -> None:
    """Set ``raw[a][b]... = value`` for ``dotted = "a.b..."``, creating sections."""
    keys = dotted.split(".")
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot override {dotted}: {key} is not a section")
    node[keys[-1]] = value


def with_overrides(config: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    raw = copy.deepcopy(config.to_dict())
    for dotted, value in overrides.items():
        apply_override(raw, dotted, value)
    return ExperimentConfig.from_dict(raw)


def desk_benchmark() -> ExperimentConfig:
    """The pinned synthetic benchmark used by the acceptance suite.

    10 clients over 3 modalities, Dirichlet(0.3) label skew, 50 rounds,
    FedProx mu=0.01, 5 local epochs, batch 32, k=64.
    """
    return ExperimentConfig()
