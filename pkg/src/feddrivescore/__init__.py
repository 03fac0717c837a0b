"""Driving-behaviour scoring with CRITIC weights, trainable centrally or federated under Paillier encryption."""
from .critic import ScoringModel, metric_score, train_central, trip_score
from .datagen import PopulationSpec, gen_synthetic_population, make_population, partition_non_iid
from .estimators import CriticDMScorer, FedAvgCriticDM, FederatedCriticDM
from .evaluation import ConsistencyReport, consistency_report, regression_indexes
from .federated import RoundConfig, federated_infer, train_fedavg_baseline, train_federated
from .paillier import FixedPointCodec, keygen
from .specs import FLEET_SPECS, UBI_SPECS, MetricSpec

__version__ = "0.1.0"

__all__ = [
    "ConsistencyReport",
    "CriticDMScorer",
    "FLEET_SPECS",
    "FedAvgCriticDM",
    "FederatedCriticDM",
    "FixedPointCodec",
    "MetricSpec",
    "PopulationSpec",
    "RoundConfig",
    "ScoringModel",
    "UBI_SPECS",
    "consistency_report",
    "federated_infer",
    "gen_synthetic_population",
    "keygen",
    "make_population",
    "metric_score",
    "partition_non_iid",
    "regression_indexes",
    "train_central",
    "train_fedavg_baseline",
    "train_federated",
    "trip_score",
]
