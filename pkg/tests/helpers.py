"""Small experiment configs shared by the integration tests."""

from mistfed.config import ExperimentConfig, with_overrides


def tiny_config(**overrides) -> ExperimentConfig:
    base = {
        "num_clients": 6,
        "num_rounds": 3,
        "data.samples_per_modality": 120,
        "encoder.k": 8,
        "encoder.pretrain_epochs": 5,
        "model.hidden_dims": [8],
        "train.local_epochs": 1,
    }
    base.update(overrides)
    return with_overrides(ExperimentConfig(), base)


def fedavg_config(num_clients: int = 6, fogs: int = 1, **overrides) -> ExperimentConfig:
    """mu=0 full-batch single-epoch GD without dropout: one round is one centralized GD step."""
    per_edge = -(-num_clients // fogs)
    return tiny_config(
        num_clients=num_clients,
        num_rounds=1,
        **{
            "topology.clients_per_edge": per_edge,
            "topology.edges_per_fog": 1,
            "train.mu": 0.0,
            "train.optimizer": "gd",
            "train.local_epochs": 1,
            "train.batch_size": 10**9,
            "train.learning_rate": 0.1,
            "model.dropout_rate": 0.0,
            **overrides,
        },
    )
