"""Seeded synthetic metric populations and Non-IID client partitions.

Metrics are drawn through a Gaussian copula: correlated standard normals are
mapped to exponential or normal marginals with the requested moments.
"""
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import ndtr

from ._validation import check_matrix, check_positive_int
from .exceptions import ConfigurationError, PartitionError
from .specs import FLEET_SPECS, UBI_SPECS, check_specs, specs_to_json

# Pearson correlations between trip metrics reported for the truck fleet
# and the UBI sample; the copula reproduces them approximately.
FLEET_CORRELATION = np.array([
    [1.000, 0.773, 0.037, 0.604, -0.166, 0.809],
    [0.773, 1.000, 0.043, 0.811, -0.187, 0.794],
    [0.037, 0.043, 1.000, 0.074, 0.057, 0.069],
    [0.604, 0.811, 0.074, 1.000, 0.134, 0.829],
    [-0.166, -0.187, 0.057, 0.134, 1.000, 0.014],
    [0.809, 0.794, 0.069, 0.829, 0.014, 1.000],
])
UBI_CORRELATION = np.array([
    [1.00, 0.69, 0.53, 0.73, 0.57, 0.76, 0.63],
    [0.69, 1.00, 0.31, 0.42, 0.38, 0.57, 0.45],
    [0.53, 0.31, 1.00, 0.26, 0.25, 0.48, 0.51],
    [0.73, 0.42, 0.26, 1.00, 0.49, 0.50, 0.42],
    [0.57, 0.38, 0.25, 0.49, 1.00, 0.52, 0.34],
    [0.76, 0.57, 0.48, 0.50, 0.52, 1.00, 0.48],
    [0.63, 0.45, 0.51, 0.42, 0.34, 0.48, 1.00],
])

PARTITIONS = ("iid", "shards")


@dataclass(frozen=True)
class CountRounding:
    """Turn continuous per-km values into integer counts over integer distances.

    Each trip gets a distance drawn uniformly from ``1..max_distance`` km;
    the raw count ``round(x * distance)`` is clipped to ``[0, max_count]``
    and divided back by the distance.
    """

    max_count: int = 10
    max_distance: int = 10


@dataclass(frozen=True)
class PopulationSpec:
    specs: tuple
    dist_params: tuple
    n_trips: int
    K: int
    partition: str = "shards"
    n_shards: int = None
    seed: int = 0
    correlation: np.ndarray = field(default=None, compare=False)
    sort_key: int = 0
    rounding: CountRounding = None

    def __post_init__(self):
        specs = check_specs(self.specs)
        object.__setattr__(self, "specs", specs)
        params = tuple((float(m), float(s)) for m, s in self.dist_params)
        object.__setattr__(self, "dist_params", params)
        if len(params) != len(specs):
            raise ConfigurationError("need one (mu, sigma) pair per metric")
        for spec, (m, s) in zip(specs, params):
            if spec.distribution == "exponential" and not m > 0:
                raise ConfigurationError(f"{spec.name}: exponential mean must be positive")
            if spec.distribution == "normal" and not s > 0:
                raise ConfigurationError(f"{spec.name}: normal sigma must be positive")
        check_positive_int(self.n_trips, "n_trips")
        check_positive_int(self.K, "K")
        if self.partition not in PARTITIONS:
            raise ConfigurationError(f"partition must be one of {PARTITIONS}")
        n_shards = self.K if self.n_shards is None else check_positive_int(self.n_shards, "n_shards")
        object.__setattr__(self, "n_shards", n_shards)
        if self.partition == "shards" and n_shards < self.K:
            raise ConfigurationError("shards partition needs n_shards >= K")
        if not 0 <= self.sort_key < len(specs):
            raise ConfigurationError("sort_key must index a metric")
        if self.correlation is not None:
            R = np.asarray(self.correlation, dtype=float)
            if R.shape != (len(specs), len(specs)) or not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1):
                raise ConfigurationError("correlation must be a symmetric unit-diagonal matrix")
            if np.linalg.eigvalsh(R).min() <= 0:
                raise ConfigurationError("correlation must be positive definite")
            R = R.copy()
            R.setflags(write=False)
            object.__setattr__(self, "correlation", R)


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


def gen_synthetic_population(spec):
    rng = _rng(spec.seed, 0)
    d = len(spec.specs)
    z = rng.standard_normal((spec.n_trips, d))
    if spec.correlation is not None:
        z = z @ np.linalg.cholesky(spec.correlation).T
    X = np.empty_like(z)
    for j, (ms, (m, s)) in enumerate(zip(spec.specs, spec.dist_params)):
        if ms.distribution == "exponential":
            # inverse CDF through the upper tail keeps precision for large z
            X[:, j] = -m * np.log(ndtr(-z[:, j]))
        else:
            X[:, j] = m + s * z[:, j]
    if spec.rounding is not None:
        r = spec.rounding
        dist = rng.integers(1, r.max_distance + 1, size=(spec.n_trips, 1)).astype(float)
        X = np.clip(np.round(X * dist), 0, r.max_count) / dist
    return X


def partition_iid(X, K, seed):
    X = check_matrix(X)
    K = check_positive_int(K, "K")
    if X.shape[0] < K:
        raise PartitionError(f"cannot give {K} clients at least one row each from {X.shape[0]} rows")
    order = _rng(seed, 1).permutation(X.shape[0])
    return [X[idx] for idx in np.array_split(order, K)]


def partition_non_iid(X, K, n_shards, seed, sort_key=0, return_indices=False):
    """Sort rows by one metric, cut into contiguous shards and deal them out.

    Every client receives at least one shard; the remaining shards go to
    uniformly random clients.
    """
    X = check_matrix(X)
    K = check_positive_int(K, "K")
    n_shards = check_positive_int(n_shards, "n_shards")
    if n_shards < K:
        raise PartitionError("n_shards must be at least K")
    if X.shape[0] < n_shards:
        raise PartitionError(f"{X.shape[0]} rows cannot fill {n_shards} shards")
    rng = _rng(seed, 2)
    order = np.lexsort((rng.random(X.shape[0]), X[:, sort_key]))
    shards = np.array_split(order, n_shards)
    perm = rng.permutation(n_shards)
    owner = np.empty(n_shards, dtype=int)
    owner[perm[:K]] = np.arange(K)
    owner[perm[K:]] = rng.integers(0, K, size=n_shards - K)
    idx = [np.sort(np.concatenate([shards[s] for s in np.flatnonzero(owner == k)])) for k in range(K)]
    parts = [X[i] for i in idx]
    return (parts, idx) if return_indices else parts


def make_population(spec):
    """Generate the population and split it into client datasets."""
    X = gen_synthetic_population(spec)
    if spec.partition == "iid":
        clients = partition_iid(X, spec.K, spec.seed)
    else:
        clients = partition_non_iid(X, spec.K, spec.n_shards, spec.seed, spec.sort_key)
    return X, clients


def fleet_preset(seed=0, *, n_per_client=606, K=53):
    """Truck-fleet scale: 53 vehicles, ~606 trips each, six metrics."""
    return PopulationSpec(
        specs=FLEET_SPECS,
        dist_params=((0.08, 0.08), (0.12, 0.12), (0.03, 0.03), (0.2, 0.05), (55.0, 10.0), (1250.0, 120.0)),
        n_trips=K * n_per_client,
        K=K,
        partition="shards",
        n_shards=K,
        seed=seed,
        correlation=FLEET_CORRELATION,
    )


def ubi_preset(seed=0):
    """UBI scale: 200 trips over 40 clients with 40 shards, seven count metrics."""
    return PopulationSpec(
        specs=UBI_SPECS,
        dist_params=((1.5, 1.5), (0.7, 0.7), (0.6, 0.6), (0.5, 0.5), (0.6, 0.6), (0.4, 0.4), (0.6, 0.6)),
        n_trips=200,
        K=40,
        partition="shards",
        n_shards=40,
        seed=seed,
        correlation=UBI_CORRELATION,
        rounding=CountRounding(),
    )


PRESETS = {"fleet": fleet_preset, "ubi": ubi_preset}


def population_frame(clients, specs, id_width=3):
    """Client datasets as a metrics table (vehicle_id, trip_id, metrics...)."""
    frames = []
    for k, Xk in enumerate(clients):
        f = pd.DataFrame(Xk, columns=[s.name for s in specs])
        f.insert(0, "trip_id", np.arange(len(Xk)))
        f.insert(0, "vehicle_id", f"v{k:0{id_width}d}")
        frames.append(f)
    return pd.concat(frames, ignore_index=True)


def write_population(clients, specs, csv_path, specs_path):
    population_frame(clients, specs).to_csv(csv_path, index=False, float_format="%.17g")
    with open(specs_path, "w") as fh:
        json.dump(specs_to_json(specs), fh, indent=2)
