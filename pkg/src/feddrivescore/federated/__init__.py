from .fedavg import local_critic_model, run_fedavg, train_fedavg_baseline
from .messages import MessageKind, RoundMessage, Transcript
from .parties import Arbiter, Client, EncryptedStats, GlobalStats, client_covariance, client_round_stats
from .protocol import (
    Coordinator,
    FederatedResult,
    RoundConfig,
    aggregate_encrypted_stats,
    as_clients,
    federated_infer,
    histogram_edges,
    run_federated,
    secure_histogram,
    secure_minmax_update,
    suggest_distribution,
    train_federated,
    update_global_weights,
)

__all__ = [
    "Arbiter",
    "Client",
    "Coordinator",
    "EncryptedStats",
    "FederatedResult",
    "GlobalStats",
    "MessageKind",
    "RoundConfig",
    "RoundMessage",
    "Transcript",
    "aggregate_encrypted_stats",
    "as_clients",
    "client_covariance",
    "client_round_stats",
    "federated_infer",
    "histogram_edges",
    "local_critic_model",
    "run_fedavg",
    "run_federated",
    "secure_histogram",
    "secure_minmax_update",
    "suggest_distribution",
    "train_fedavg_baseline",
    "train_federated",
    "update_global_weights",
]
