"""CRITIC weighting and distribution-based metric scoring (CRITIC-DM)."""
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtr

from ._numeric import column_sums, moments
from ._validation import check_matrix
from .exceptions import (
    ConfigurationError,
    DegenerateMetricError,
    FitError,
    InsufficientDataError,
    NumericalError,
)
from .specs import check_specs, specs_from_json, specs_to_json

NEGATIVE_TOLERANCE = 1e-9
WEIGHT_SUM_TOLERANCE = 1e-9
MODES = ("central", "federated", "fedavg")


@dataclass(frozen=True)
class StatsSummary:
    """Per-metric count, exact sums, extrema and unbiased moments."""

    n: int
    s: tuple
    o: tuple
    u: np.ndarray
    v: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray


def summarize(X):
    X = check_matrix(X)
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError("at least two rows are needed to estimate a variance")
    s, o = column_sums(X)
    mom = [moments(n, sj, oj) for sj, oj in zip(s, o)]
    return StatsSummary(
        n=n,
        s=tuple(s),
        o=tuple(o),
        u=X.max(axis=0),
        v=X.min(axis=0),
        mu=np.array([m for m, _ in mom]),
        sigma2=np.array([var for _, var in mom]),
    )


def _range(u, v, names=None):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    width = u - v
    for j, w in enumerate(width):
        if not w > 0:
            raise DegenerateMetricError(names[j] if names else j, "zero range" if w == 0 else "max below min")
    return width


def min_max_normalize(X, u, v, names=None):
    X = check_matrix(X, n_features=len(np.atleast_1d(u)))
    return (X - v) / _range(u, v, names)


def normalize_moments(mu, sigma, u, v, names=None):
    """Mean and standard deviation of the min-max normalised metrics."""
    width = _range(u, v, names)
    return (np.asarray(mu, dtype=float) - v) / width, np.asarray(sigma, dtype=float) / width


def scatter_matrix(Z, center):
    """Sum over rows of ``(z - center)(z - center)^T``."""
    D = np.asarray(Z, dtype=float) - np.asarray(center, dtype=float)
    return D.T @ D


def covariance_scatter(Z, mu_z):
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] < 2:
        raise InsufficientDataError("at least two rows are needed for a covariance")
    return scatter_matrix(Z, mu_z) / (Z.shape[0] - 1)


def pearson_from_cov(A, sigma):
    sigma = np.asarray(sigma, dtype=float)
    for j, sj in enumerate(sigma):
        if not sj > 0:
            raise DegenerateMetricError(j, "zero variance")
    return np.asarray(A, dtype=float) / np.outer(sigma, sigma)


def critic_coefficients(sigma, R):
    """Information content ``c_j = sigma_j * sum_k (1 - R_jk)``."""
    sigma = np.asarray(sigma, dtype=float)
    R = np.asarray(R, dtype=float)
    c = sigma * (1.0 - R).sum(axis=1)
    if np.any(c < -NEGATIVE_TOLERANCE):
        raise NumericalError(f"negative information content {c.min():.3g}")
    return np.maximum(c, 0.0)


def critic_weights(sigma, R):
    c = critic_coefficients(sigma, R)
    total = c.sum()
    if total == 0:
        return np.full(c.size, 1.0 / c.size)
    return c / total


@dataclass(frozen=True)
class CdfParams:
    """A fitted marginal: exponential (rate 1/mu), normal, or a point mass."""

    family: str
    mu: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.family == "exponential" and not self.mu > 0:
            raise FitError(f"exponential fit needs a positive mean, got {self.mu}")
        if self.family == "normal" and not self.sigma > 0:
            raise FitError(f"normal fit needs a positive standard deviation, got {self.sigma}")
        if self.family not in ("exponential", "normal", "degenerate"):
            raise FitError(f"unknown family {self.family!r}")

    @property
    def rate(self):
        return 1.0 / self.mu

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "exponential":
            return np.where(x < 0, 0.0, -np.expm1(-np.maximum(x, 0.0) / self.mu))
        if self.family == "normal":
            return ndtr((x - self.mu) / self.sigma)
        return np.where(x >= self.mu, 1.0, 0.0)


def fit_distribution(spec, mu, sigma):
    return CdfParams(spec.distribution, float(mu), float(sigma))


def metric_score(spec, cdf, mu_j, x):
    """Score in [0, 1] of raw metric values ``x`` under a fitted marginal."""
    F = cdf.cdf(x)
    if spec.expectation == "positive":
        q = F
    elif spec.expectation == "negative":
        q = 1.0 - F
    else:
        q = 1.0 - 2.0 * np.abs(cdf.cdf(mu_j) - F)
    return np.clip(q, 0.0, 1.0)


def trip_score(weights, q):
    """Weighted sum of metric scores; ``q`` is one trip or an (n, d) matrix."""
    return np.asarray(q, dtype=float) @ np.asarray(weights, dtype=float)


def _frozen(a):
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScoringModel:
    specs: tuple
    weights: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    v: np.ndarray
    trained_rounds: int = 0
    mode: str = "central"
    degenerate: tuple = field(default=())

    def __post_init__(self):
        specs = check_specs(self.specs)
        object.__setattr__(self, "specs", specs)
        d = len(specs)
        for name in ("weights", "mu", "sigma", "u", "v"):
            arr = _frozen(getattr(self, name))
            if arr.shape != (d,):
                raise ConfigurationError(f"{name} must have length {d}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "degenerate", tuple(int(j) for j in self.degenerate))
        w = self.weights
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ConfigurationError("weights must be non-negative and sum to one")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")

    @property
    def n_metrics(self):
        return len(self.specs)

    @cached_property
    def cdfs(self):
        out = []
        for j, spec in enumerate(self.specs):
            if j in self.degenerate:
                out.append(CdfParams("degenerate", float(self.mu[j])))
            else:
                out.append(fit_distribution(spec, self.mu[j], self.sigma[j]))
        return tuple(out)

    def metric_scores(self, X):
        X = check_matrix(X, n_features=self.n_metrics)
        cols = [metric_score(s, c, m, X[:, j]) for j, (s, c, m) in enumerate(zip(self.specs, self.cdfs, self.mu))]
        return np.column_stack(cols) if cols else np.empty((X.shape[0], 0))

    def score(self, X):
        return trip_score(self.weights, self.metric_scores(X))

    def to_dict(self):
        return {
            "specs": specs_to_json(self.specs),
            "weights": self.weights.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "trained_rounds": self.trained_rounds,
            "mode": self.mode,
            "degenerate": list(self.degenerate),
        }

    def to_json(self):
        # json writes floats with repr, which round-trips bit-exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj):
        try:
            return cls(
                specs=specs_from_json(obj["specs"]),
                weights=obj["weights"],
                mu=obj["mu"],
                sigma=obj["sigma"],
                u=obj["u"],
                v=obj["v"],
                trained_rounds=int(obj.get("trained_rounds", 0)),
                mode=obj.get("mode", "central"),
                degenerate=tuple(obj.get("degenerate", ())),
            )
        except KeyError as exc:
            raise ConfigurationError(f"model is missing field {exc}") from exc

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True)
class CriticFit:
    """Intermediate quantities of a central CRITIC fit."""

    summary: StatsSummary
    mu_z: np.ndarray
    sigma_z: np.ndarray
    covariance: np.ndarray
    correlation: np.ndarray
    coefficients: np.ndarray
    weights: np.ndarray
    degenerate: tuple


def degenerate_metrics(u, v, sigma2):
    return tuple(j for j in range(len(u)) if not (u[j] > v[j] and sigma2[j] > 0))


def fit_critic(X, specs=None, *, drop_degenerate=False):
    X = check_matrix(X)
    d = X.shape[1]
    names = [s.name for s in specs] if specs is not None else None
    summary = summarize(X)
    bad = degenerate_metrics(summary.u, summary.v, summary.sigma2)
    if bad and not drop_degenerate:
        raise DegenerateMetricError(names[bad[0]] if names else bad[0])
    keep = np.array([j for j in range(d) if j not in bad], dtype=int)
    if keep.size == 0:
        raise DegenerateMetricError(names[0] if names else 0, "every metric is constant")
    sigma = np.sqrt(summary.sigma2)
    mu_z, sigma_z = np.zeros(d), np.zeros(d)
    mu_z[keep], sigma_z[keep] = normalize_moments(summary.mu[keep], sigma[keep], summary.u[keep], summary.v[keep])
    Z = min_max_normalize(X[:, keep], summary.u[keep], summary.v[keep])
    A = np.zeros((d, d))
    R = np.zeros((d, d))
    A[np.ix_(keep, keep)] = covariance_scatter(Z, mu_z[keep])
    R[np.ix_(keep, keep)] = pearson_from_cov(A[np.ix_(keep, keep)], sigma_z[keep])
    c = np.zeros(d)
    w = np.zeros(d)
    c[keep] = critic_coefficients(sigma_z[keep], R[np.ix_(keep, keep)])
    w[keep] = critic_weights(sigma_z[keep], R[np.ix_(keep, keep)])
    return CriticFit(summary, mu_z, sigma_z, A, R, c, w, bad)


def model_from_fit(fit, specs):
    s = fit.summary
    return ScoringModel(
        specs=specs,
        weights=fit.weights,
        mu=s.mu,
        sigma=np.sqrt(s.sigma2),
        u=s.u,
        v=s.v,
        mode="central",
        degenerate=fit.degenerate,
    )


def train_central(X, specs, *, drop_degenerate=False):
    """Fit a scoring model on pooled data."""
    specs = check_specs(specs)
    X = check_matrix(X, n_features=len(specs), min_rows=2)
    return model_from_fit(fit_critic(X, specs, drop_degenerate=drop_degenerate), specs)


def is_simplex(w, tol=WEIGHT_SUM_TOLERANCE):
    w = np.asarray(w, dtype=float)
    return bool(np.all(w >= 0) and math.isclose(w.sum(), 1.0, abs_tol=tol))
