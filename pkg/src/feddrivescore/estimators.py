"""scikit-learn style wrappers around the central, federated and FedAvg trainers."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .critic import fit_critic, model_from_fit
from .exceptions import ConfigurationError
from .federated.fedavg import run_fedavg
from .federated.protocol import DEFAULT_KEY_BITS, PROTOCOL_SCALE, RoundConfig, run_federated
from .specs import check_specs


class _ScoringMixin(TransformerMixin):
    def _specs(self):
        if self.specs is None:
            raise ConfigurationError("specs must be given")
        return check_specs(self.specs)

    def transform(self, X):
        """Per-metric scores in [0, 1]."""
        check_is_fitted(self, "model_")
        return self.model_.metric_scores(check_matrix(X, n_features=self.n_features_in_))

    def predict(self, X):
        """Trip scores in [0, 1]."""
        check_is_fitted(self, "model_")
        return self.model_.score(check_matrix(X, n_features=self.n_features_in_))

    def _set_model(self, model):
        self.model_ = model
        self.weights_ = np.array(model.weights)
        self.mu_ = np.array(model.mu)
        self.sigma_ = np.array(model.sigma)
        self.u_ = np.array(model.u)
        self.v_ = np.array(model.v)
        self.n_features_in_ = model.n_metrics


class CriticDMScorer(_ScoringMixin, BaseEstimator):
    """CRITIC-weighted distribution-mixture scorer fitted on pooled data.

    Parameters
    ----------
    specs : sequence of MetricSpec
        One entry per column of ``X``.
    drop_degenerate : bool, default=False
        Give constant metrics zero weight instead of raising.
    """

    def __init__(self, specs=None, drop_degenerate=False):
        self.specs = specs
        self.drop_degenerate = drop_degenerate

    def fit(self, X, y=None):
        specs = self._specs()
        X = check_matrix(X, n_features=len(specs), min_rows=2)
        fit = fit_critic(X, specs, drop_degenerate=self.drop_degenerate)
        self._set_model(model_from_fit(fit, specs))
        self.correlation_ = fit.correlation
        self.coefficients_ = fit.coefficients
        return self


class FederatedCriticDM(_ScoringMixin, BaseEstimator):
    """Encrypted federated training over a list (or dict) of client datasets."""

    def __init__(
        self,
        specs=None,
        rounds=300,
        tau=0.5,
        key_bits=DEFAULT_KEY_BITS,
        random_state=0,
        fixed_point_scale=PROTOCOL_SCALE,
    ):
        self.specs = specs
        self.rounds = rounds
        self.tau = tau
        self.key_bits = key_bits
        self.random_state = random_state
        self.fixed_point_scale = fixed_point_scale

    def _config(self):
        return RoundConfig(
            T=self.rounds,
            tau=self.tau,
            rng_seed=self.random_state,
            key_bits=self.key_bits,
            fixed_point_scale=self.fixed_point_scale,
        )

    def fit(self, clients, y=None, *, keys=None, transcript=None):
        result = run_federated(clients, self._specs(), self._config(), keys, transcript=transcript)
        self._set_model(result.model)
        self.weight_history_ = result.weight_history
        self.transcript_ = result.transcript
        self.result_ = result
        return self


class FedAvgCriticDM(_ScoringMixin, BaseEstimator):
    """Baseline that averages locally fitted models across sampled clients."""

    def __init__(self, specs=None, rounds=300, tau=0.5, random_state=0):
        self.specs = specs
        self.rounds = rounds
        self.tau = tau
        self.random_state = random_state

    def fit(self, clients, y=None):
        cfg = RoundConfig(T=self.rounds, tau=self.tau, rng_seed=self.random_state)
        result = run_fedavg(clients, self._specs(), cfg)
        self._set_model(result.model)
        self.weight_history_ = result.weight_history
        return self
