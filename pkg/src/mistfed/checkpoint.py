"""Model checkpoint files.

A checkpoint is a UTF-8 JSON document::

    {
      "format": "mistfed-checkpoint/1",
      "version": <cloud model version>,
      "round": <last completed round>,
      "config_digest": <sha256 of the canonical config JSON>,
      "mlp": {"input_dim": .., "hidden_dims": [..], "num_classes": .., "dropout_rate": ..},
      "model": {"length": n, "sha256": <digest of little-endian float64 bytes>,
                "values": ["0x1.8p-3", ...]},
      "encoders": [{"modality_id": .., "raw_dim": .., "k": .., "activation": ..,
                    "weights": [hex floats], "decoder": [hex floats] | null}, ...]
    }

Every real is stored with ``float.hex`` so a round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderParams
from .errors import ConfigurationError
from .hierarchy import model_digest
from .model import MlpConfig

FORMAT = "mistfed-checkpoint/1"


@dataclass
class Checkpoint:
    model: np.ndarray
    mlp: MlpConfig
    version: int = 0
    round: int = 0
    config_digest: str = ""
    encoders: dict[str, EncoderParams] = field(default_factory=dict)


def _hex(values: np.ndarray) -> list[str]:
    return [float(v).hex() for v in values]


def _unhex(values: list[str]) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=np.float64)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    doc = {
        "format": FORMAT,
        "version": ckpt.version,
        "round": ckpt.round,
        "config_digest": ckpt.config_digest,
        "mlp": {
            "input_dim": ckpt.mlp.input_dim,
            "hidden_dims": list(ckpt.mlp.hidden_dims),
            "num_classes": ckpt.mlp.num_classes,
            "dropout_rate": ckpt.mlp.dropout_rate,
        },
        "model": {"length": int(ckpt.model.size), "sha256": model_digest(ckpt.model), "values": _hex(ckpt.model)},
        "encoders": [
            {
                "modality_id": e.modality_id,
                "raw_dim": e.raw_dim,
                "k": e.k,
                "activation": e.activation,
                "weights": _hex(e.weights),
                "decoder": None if e.decoder is None else _hex(e.decoder),
            }
            for _, e in sorted(ckpt.encoders.items())
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise ConfigurationError(f"{path} is not a {FORMAT} file")
    model = _unhex(doc["model"]["values"])
    if model.size != doc["model"]["length"] or model_digest(model) != doc["model"]["sha256"]:
        raise ConfigurationError(f"checkpoint {path} failed its integrity check")
    mlp = MlpConfig(**doc["mlp"])
    encoders = {}
    for e in doc["encoders"]:
        dec = None if e["decoder"] is None else _unhex(e["decoder"])
        encoders[e["modality_id"]] = EncoderParams(e["modality_id"], e["raw_dim"], e["k"], _unhex(e["weights"]), e["activation"], dec)
    return Checkpoint(model, mlp, doc["version"], doc["round"], doc["config_digest"], encoders)


def checkpoint_from_state(state) -> Checkpoint:
    """Snapshot an :class:`~mistfed.orchestrator.ExperimentState`."""
    return Checkpoint(
        state.cloud.global_model.copy(),
        state.mlp,
        state.cloud.version,
        state.round_index,
        state.config.digest(),
        dict(state.encoders),
    )
