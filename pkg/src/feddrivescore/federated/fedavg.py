"""FedAvg-style baseline: average locally fitted CRITIC-DM models."""
from dataclasses import dataclass

import numpy as np

from ..critic import ScoringModel, critic_weights
from ..exceptions import DegenerateMetricError, TrainingError
from ..specs import check_specs
from .protocol import RoundConfig, as_clients, derive_seed, update_global_weights


@dataclass(frozen=True)
class LocalModel:
    n: int
    mu: np.ndarray
    sigma: np.ndarray
    weights: np.ndarray
    u: np.ndarray
    v: np.ndarray


def local_critic_model(X):
    """Mean, standard deviation and CRITIC weights fitted on one client's data.

    A metric that is constant on the client gets zero spread and zero
    correlation, hence zero information content; if every metric is
    constant the weights fall back to uniform.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    u, v = X.max(axis=0), X.min(axis=0)
    mu = X.mean(axis=0)
    sigma = X.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    width = u - v
    live = width > 0
    sigma_z = np.zeros(d)
    R = np.zeros((d, d))
    if n > 1 and live.any():
        Z = (X[:, live] - v[live]) / width[live]
        sigma_z[live] = Z.std(axis=0, ddof=1)
        R[np.ix_(live, live)] = np.atleast_2d(np.corrcoef(Z, rowvar=False))
    return LocalModel(n, mu, sigma, critic_weights(sigma_z, R), u, v)


@dataclass
class FedAvgResult:
    model: ScoringModel
    weight_history: np.ndarray


def run_fedavg(clients, specs, cfg):
    specs = check_specs(specs)
    d = len(specs)
    clients = [c for c in as_clients(clients, cfg.rng_seed, n_features=d)]
    if all(c.n_samples == 0 for c in clients):
        raise TrainingError("every client is empty")
    rng = np.random.default_rng(derive_seed(cfg.rng_seed, "selection"))
    k = cfg.n_selected(len(clients))
    w = mu = sigma = None
    u = np.full(d, -np.inf)
    v = np.full(d, np.inf)
    t = 0
    history = np.empty((cfg.T, d))
    for r in range(cfg.T):
        idx = np.sort(rng.choice(len(clients), size=k, replace=False))
        local = [local_critic_model(clients[i].local_data) for i in idx if clients[i].n_samples]
        if local:
            n = np.array([m.n for m in local], dtype=float)
            avg = lambda attr: (n[:, None] * np.array([getattr(m, attr) for m in local])).sum(0) / n.sum()  # noqa: E731
            t += 1
            if t == 1:
                w, mu, sigma = avg("weights"), avg("mu"), avg("sigma")
            else:
                w = update_global_weights(w, t, avg("weights"))
                mu = update_global_weights(mu, t, avg("mu"))
                sigma = update_global_weights(sigma, t, avg("sigma"))
            u = np.maximum(u, np.max([m.u for m in local], axis=0))
            v = np.minimum(v, np.min([m.v for m in local], axis=0))
        history[r] = w if w is not None else np.full(d, 1.0 / d)
    if w is None:
        raise TrainingError("no client ever replied")
    for j, spec in enumerate(specs):
        if spec.distribution == "normal" and not sigma[j] > 0:
            raise DegenerateMetricError(spec.name, "zero averaged standard deviation")
        if spec.distribution == "exponential" and not mu[j] > 0:
            raise DegenerateMetricError(spec.name, "non-positive averaged mean")
    model = ScoringModel(specs, w / w.sum(), mu, sigma, u, v, trained_rounds=cfg.T, mode="fedavg")
    return FedAvgResult(model, history)


def train_fedavg_baseline(clients, specs, cfg=None):
    cfg = cfg or RoundConfig(T=300, tau=0.5)
    return run_fedavg(clients, specs, cfg).model
