import json

import numpy as np
import pytest

from helpers import tiny_config
from mistfed.checkpoint import Checkpoint, checkpoint_from_state, load_checkpoint, save_checkpoint
from mistfed.encoder import encode
from mistfed.errors import ConfigurationError
from mistfed.model import MlpConfig
from mistfed.orchestrator import evaluate, run_experiment


def test_awkward_floats_round_trip(tmp_path):
    values = np.array([0.1, -0.0, 5e-324, 1.7976931348623157e308, np.nextafter(1.0, 2.0), -1 / 3])
    ckpt = Checkpoint(values, MlpConfig(1, (), 2, 0.0))
    save_checkpoint(ckpt, tmp_path / "c.json")
    back = load_checkpoint(tmp_path / "c.json").model
    assert back.tobytes() == values.tobytes()


def test_experiment_round_trip_and_resumed_evaluation(tmp_path):
    result = run_experiment(tiny_config(num_rounds=2))
    state = result.state
    path = tmp_path / "ckpt.json"
    save_checkpoint(checkpoint_from_state(state), path)
    loaded = load_checkpoint(path)
    assert loaded.model.tobytes() == state.cloud.global_model.tobytes()
    assert loaded.version == 2 and loaded.round == 2
    assert loaded.config_digest == state.config.digest()
    assert loaded.mlp == state.mlp
    for mid, enc in state.encoders.items():
        assert loaded.encoders[mid].weights.tobytes() == enc.weights.tobytes()

    # re-encode validation data with the restored encoders and re-score
    order = sorted(state.clients)
    z = np.concatenate([encode(loaded.encoders[state.clients[c].dataset.modality.modality_id], state.clients[c].dataset.validation.x) for c in order])
    again = evaluate(loaded.model, loaded.mlp, z, state.val_y)
    assert again.to_dict() == result.reports[-1].metrics


def test_tampered_file_rejected(tmp_path):
    path = tmp_path / "c.json"
    save_checkpoint(Checkpoint(np.array([1.0, 2.0]), MlpConfig(1, (), 2, 0.0)), path)
    doc = json.loads(path.read_text())
    doc["model"]["values"][0] = (1.5).hex()
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigurationError, match="integrity"):
        load_checkpoint(path)


def test_wrong_format_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)
