"""Coordinator-side simulation of the encrypted federated CRITIC-DM trainer."""
import math
import random
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from .._validation import check_fraction, check_positive_int
from ..critic import ScoringModel, critic_weights
from ..exceptions import (
    ArbiterUnavailable,
    ConfigurationError,
    DegenerateMetricError,
    KeyMismatchError,
    ProtocolError,
    TrainingError,
)
from ..paillier import FixedPointCodec, keygen
from ..specs import check_specs
from .messages import ARBITER, BROADCAST, COORDINATOR, MessageKind, RoundMessage, Transcript
from .parties import Arbiter, Client, EncryptedStats, local_histogram, triu_unpack

PROTOCOL_SCALE = 2**64
DEFAULT_KEY_BITS = 1024


@dataclass(frozen=True)
class RoundConfig:
    T: int
    tau: float
    K: int = None
    rng_seed: int = 0
    histogram_bins: int = 50
    key_bits: int = DEFAULT_KEY_BITS
    fixed_point_scale: int = PROTOCOL_SCALE
    max_retries: int = 10

    def __post_init__(self):
        check_positive_int(self.T, "T")
        check_fraction(self.tau, "tau")
        check_positive_int(self.histogram_bins, "histogram_bins")
        check_positive_int(self.fixed_point_scale, "fixed_point_scale")
        if self.K is not None:
            check_positive_int(self.K, "K")

    def n_selected(self, K):
        # guard against 0.1 * 30 = 3.0000000000000004
        return max(1, math.ceil(round(self.tau * K, 9)))


def derive_seed(seed, label):
    return (int(seed) * 1_000_003 + zlib.crc32(str(label).encode())) % 2**63


def as_clients(clients, seed=0, n_features=None):
    """Wrap arrays (or an id -> array mapping) into Client objects sorted by id."""
    if isinstance(clients, dict):
        items = list(clients.items())
    else:
        items = list(clients)
        if items and not isinstance(items[0], Client):
            width = max(3, len(str(len(items) - 1)))
            items = [(f"{k:0{width}d}", X) for k, X in enumerate(items)]
    out = []
    for item in items:
        if isinstance(item, Client):
            out.append(item)
        else:
            cid, X = item
            out.append(Client(cid, X, n_features=n_features, seed=derive_seed(seed, cid)))
    out.sort(key=lambda c: c.client_id)
    ids = [c.client_id for c in out]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("client ids must be unique")
    if not out:
        raise TrainingError("no clients")
    return out


def update_global_weights(w, t, w_round):
    """Running mean of per-round weights: ``w <- (1 - 1/t) w + w_round / t``."""
    if t < 1:
        raise ValueError("round index starts at 1")
    return (1.0 - 1.0 / t) * np.asarray(w, dtype=float) + np.asarray(w_round, dtype=float) / t


def aggregate_encrypted_stats(pk, acc, replies):
    """Add the replies' counts and sums onto ``acc``; extrema are left untouched."""
    for r in replies:
        for c in (r.n, *r.s, *r.o):
            if c.key_id != pk.key_id:
                raise KeyMismatchError("reply encrypted under a foreign key")
    n, s, o = acc.n, list(acc.s), list(acc.o)
    for r in replies:
        n = pk.add(n, r.n)
        s = [pk.add(a, b) for a, b in zip(s, r.s)]
        o = [pk.add(a, b) for a, b in zip(o, r.o)]
    return replace(acc, n=n, s=tuple(s), o=tuple(o))


def secure_minmax_update(pk, u, v, replies, arbiter, round_=0, transcript=None):
    """Fold replies' encrypted maxima/minima into ``(u, v)`` using arbiter sign checks.

    ``u``/``v`` may be None before the first reply, which then becomes the
    incumbent. Equal values keep the incumbent.
    """
    log = transcript.log if transcript is not None else (lambda m: m)
    u = None if u is None else list(u)
    v = None if v is None else list(v)
    for r in replies:
        if u is None:
            u, v = list(r.u), list(r.v)
            continue
        query = log(RoundMessage(
            MessageKind.MINMAX_QUERY, round_, COORDINATOR, ARBITER,
            {"u_diff": tuple(pk.sub(a, b) for a, b in zip(u, r.u)),
             "v_diff": tuple(pk.sub(a, b) for a, b in zip(v, r.v))},
        ))
        verdict = log(arbiter.compare(query)).payload
        u = [b if sign < 0 else a for a, b, sign in zip(u, r.u, verdict["u_sign"])]
        v = [b if sign > 0 else a for a, b, sign in zip(v, r.v, verdict["v_sign"])]
    return (None, None) if u is None else (tuple(u), tuple(v))


@dataclass(frozen=True)
class FederationState:
    acc: EncryptedStats
    n_distinct: object
    seen: frozenset = frozenset()
    weights: np.ndarray = None
    updates: int = 0
    stats: object = None  # last decrypted GlobalStats


@dataclass
class FederatedResult:
    model: ScoringModel
    weight_history: np.ndarray
    updated: np.ndarray
    stats: object
    transcript: Transcript
    retries: int
    selections: list = field(default_factory=list)


class _RoundAborted(Exception):
    pass


class Coordinator:
    """Runs rounds over a fixed client population with one arbiter."""

    def __init__(self, clients, specs, cfg, keys=None, *, transcript=None, arbiter_fault=None):
        self.specs = check_specs(specs)
        self.cfg = cfg
        self.d = len(self.specs)
        self.clients = as_clients(clients, cfg.rng_seed, n_features=self.d)
        if cfg.K is not None and cfg.K != len(self.clients):
            raise ConfigurationError(f"config says K={cfg.K} but {len(self.clients)} clients were given")
        for c in self.clients:
            if c.n_samples and c.n_features != self.d:
                raise ConfigurationError(f"client {c.client_id} has {c.n_features} metrics, specs have {self.d}")
        if all(c.n_samples == 0 for c in self.clients):
            raise TrainingError("every client is empty")
        self.keys = keys if keys is not None else keygen(cfg.key_bits, derive_seed(cfg.rng_seed, "keys"))
        self.pk = self.keys.public
        self.codec = FixedPointCodec(self.pk.n, cfg.fixed_point_scale)
        self.arbiter = Arbiter(self.keys, self.codec, fault=arbiter_fault)
        self.transcript = transcript if transcript is not None else Transcript()
        self.rng = np.random.default_rng(derive_seed(cfg.rng_seed, "selection"))
        self._own_rng = random.Random(derive_seed(cfg.rng_seed, "coordinator"))
        self.k = cfg.n_selected(len(self.clients))

    def _log(self, msg):
        return self.transcript.log(msg)

    def _zero(self):
        return self.pk.encrypt(0, self._own_rng)

    def initial_state(self):
        acc = EncryptedStats(
            n=self._zero(),
            s=tuple(self._zero() for _ in range(self.d)),
            o=tuple(self._zero() for _ in range(self.d)),
            u=None,
            v=None,
        )
        return FederationState(acc=acc, n_distinct=self._zero(), weights=np.full(self.d, 1.0 / self.d))

    def select(self):
        idx = np.sort(self.rng.choice(len(self.clients), size=self.k, replace=False))
        return [self.clients[i] for i in idx]

    # -- one round ---------------------------------------------------------

    def _collect_stats(self, t, selected):
        responders, replies, failed = [], [], 0
        for c in selected:
            self._log(RoundMessage(MessageKind.SELECT_REQUEST, t, COORDINATOR, c.address, {}))
            if c.is_down(t):
                failed += 1
                continue
            msg = c.stats_reply(t, self.pk, self.codec)
            if msg is None:
                continue
            self._log(msg)
            responders.append(c)
            replies.append(msg.payload["stats"])
        if failed * 2 > len(selected):
            raise _RoundAborted(f"{failed} of {len(selected)} clients failed")
        return responders, replies

    def _open(self, t, what, **body):
        q = self._log(RoundMessage(MessageKind.AGGREGATE_QUERY, t, COORDINATOR, ARBITER, {"what": what, **body}))
        return self._log(self.arbiter.open(q)).payload["result"]

    def run_round(self, t, state, selected):
        """Execute both tasks of round ``t``; returns the new state without mutating ``state``."""
        pk = self.pk
        responders, replies = self._collect_stats(t, selected)
        acc = aggregate_encrypted_stats(pk, state.acc, replies)
        n_distinct, seen = state.n_distinct, set(state.seen)
        for c, r in zip(responders, replies):
            if c.client_id not in seen:
                seen.add(c.client_id)
                n_distinct = pk.add(n_distinct, r.n)
        u, v = secure_minmax_update(pk, state.acc.u, state.acc.v, replies, self.arbiter, t, self.transcript)
        acc = replace(acc, u=u, v=v)
        new = replace(state, acc=acc, n_distinct=n_distinct, seen=frozenset(seen))
        if u is None:
            return new

        g = self._open(t, "stats", stats=acc, n_distinct=n_distinct)
        new = replace(new, stats=g)
        prev_n = state.stats.n if state.stats is not None else 0
        n_round = g.n - prev_n
        if n_round < 2 or g.degenerate():
            # moments are not yet defined on every metric; carry the weights over
            return new

        width = g.u - g.v
        mu_z = (g.mu - g.v) / width
        sigma_z = np.sqrt(g.sigma2) / width
        self._log(RoundMessage(
            MessageKind.MOMENTS_BROADCAST, t, COORDINATOR, BROADCAST,
            {"n": g.n, "u": g.u, "v": g.v, "mu": g.mu, "sigma2": g.sigma2},
        ))
        covs = [self._log(c.covariance_reply(t, pk, self.codec, g, mu_z)).payload["scatter"] for c in responders]
        pooled = [pk.sum(col) for col in zip(*covs)]
        S = triu_unpack(np.array([float(x) for x in self._open(t, "scatter", values=tuple(pooled))]), self.d)
        A = S / (n_round - 1)
        scale = np.sqrt(np.diag(A))
        if not np.all(scale > 0):
            return new
        R = A / np.outer(scale, scale)
        w_round = critic_weights(sigma_z, R)
        updates = state.updates + 1
        weights = update_global_weights(state.weights, updates, w_round)
        self._log(RoundMessage(MessageKind.WEIGHTS_BROADCAST, t, COORDINATOR, BROADCAST, {"weights": tuple(weights)}))
        return replace(new, weights=weights, updates=updates)

    # -- full training -------------------------------------------------------

    def fit(self):
        state = self.initial_state()
        history = np.empty((self.cfg.T, self.d))
        updated = np.zeros(self.cfg.T, dtype=bool)
        selections = []
        retries = 0
        for t in range(1, self.cfg.T + 1):
            for attempt in range(self.cfg.max_retries + 1):
                selected = self.select()
                try:
                    new = self.run_round(t, state, selected)
                    break
                except (_RoundAborted, ArbiterUnavailable):
                    retries += 1
            else:
                raise TrainingError(f"round {t} failed {self.cfg.max_retries + 1} times")
            updated[t - 1] = new.updates > state.updates
            state = new
            history[t - 1] = state.weights
            selections.append([c.client_id for c in selected])
        return FederatedResult(
            model=self._final_model(state),
            weight_history=history,
            updated=updated,
            stats=state.stats,
            transcript=self.transcript,
            retries=retries,
            selections=selections,
        )

    def _final_model(self, state):
        g = state.stats
        if g is None:
            raise TrainingError("no client ever replied")
        bad = g.degenerate()
        if bad:
            raise DegenerateMetricError(self.specs[bad[0]].name)
        if state.updates == 0:
            raise TrainingError("no round produced a weight update")
        return ScoringModel(
            specs=self.specs,
            weights=state.weights,
            mu=g.mu,
            sigma=np.sqrt(g.sigma2),
            u=g.u,
            v=g.v,
            trained_rounds=self.cfg.T,
            mode="federated",
        )

    # -- histogram and inference -----------------------------------------------

    def secure_extrema(self, round_=0):
        """Global per-metric (max, min) from one encrypted pass over every client."""
        replies = []
        for c in self.clients:
            msg = c.stats_reply(round_, self.pk, self.codec)
            if msg is not None:
                replies.append(self._log(msg).payload["stats"])
        u, v = secure_minmax_update(self.pk, None, None, replies, self.arbiter, round_, self.transcript)
        if u is None:
            raise TrainingError("every client is empty")
        return self._open(round_, "extrema", u=u, v=v)

    def secure_histogram(self, edges, round_=0):
        replies = [self._log(c.histogram_reply(round_, self.pk, edges)).payload["counts"] for c in self.clients]
        pooled = tuple(tuple(self.pk.sum(cell) for cell in zip(*rows)) for rows in zip(*replies))
        return [np.array(row, dtype=np.int64) for row in self._open(round_, "counts", values=pooled)]


def run_federated(clients, specs, cfg, keys=None, *, transcript=None, arbiter_fault=None):
    coord = Coordinator(clients, specs, cfg, keys, transcript=transcript, arbiter_fault=arbiter_fault)
    return coord.fit()


def train_federated(clients, specs, cfg, keys=None, **kwargs):
    return run_federated(clients, specs, cfg, keys, **kwargs).model


def histogram_edges(u, v, bins):
    return [np.linspace(lo, hi, bins + 1) if hi > lo else np.array([lo - 0.5, lo + 0.5]) for lo, hi in zip(v, u)]


def secure_histogram(clients, specs, bin_edges, keys=None, *, cfg=None, transcript=None):
    """Global per-metric bin counts; clients reveal only encrypted counts."""
    cfg = cfg or RoundConfig(T=1, tau=1.0, key_bits=512)
    coord = Coordinator(clients, specs, cfg, keys, transcript=transcript)
    return coord.secure_histogram(bin_edges)


def suggest_distribution(counts, edges):
    """Pick the family (exponential or normal) whose binned probabilities fit best."""
    counts = np.asarray(counts, dtype=float)
    edges = np.asarray(edges, dtype=float)
    total = counts.sum()
    if total == 0:
        raise ProtocolError("empty histogram")
    mids = (edges[:-1] + edges[1:]) / 2
    mean = float((counts * mids).sum() / total)
    sd = float(np.sqrt((counts * (mids - mean) ** 2).sum() / total))
    p_obs = counts / total
    losses = {}
    if edges[0] >= 0 and mean > 0:
        F = -np.expm1(-np.maximum(edges, 0) / mean)
        losses["exponential"] = float(((np.diff(F) - p_obs) ** 2).sum())
    if sd > 0:
        F = ndtr((edges - mean) / sd)
        losses["normal"] = float(((np.diff(F) - p_obs) ** 2).sum())
    if not losses:
        raise ProtocolError("histogram too degenerate to choose a family")
    return min(losses, key=losses.get)


def federated_infer(model, clients, *, transcript=None, round_=0, errors="raise"):
    """Broadcast the model and collect (client_id, score) pairs, one per trip."""
    clients = as_clients(clients, n_features=model.n_metrics)
    transcript = transcript if transcript is not None else Transcript()
    transcript.log(RoundMessage(MessageKind.MODEL_BROADCAST, round_, COORDINATOR, BROADCAST, {"model": model.to_json()}))
    pairs, failures = [], []
    for c in clients:
        msg = transcript.log(c.score_reply(round_, model))
        if msg.payload.get("error"):
            failures.append((c.client_id, msg.payload["error"]))
        pairs.extend(msg.payload["pairs"])
    if failures and errors == "raise":
        raise ProtocolError(f"clients reported errors: {failures}")
    return pairs


__all__ = [
    "Coordinator",
    "FederatedResult",
    "RoundConfig",
    "aggregate_encrypted_stats",
    "as_clients",
    "federated_infer",
    "histogram_edges",
    "local_histogram",
    "run_federated",
    "secure_histogram",
    "secure_minmax_update",
    "suggest_distribution",
    "train_federated",
    "update_global_weights",
]
