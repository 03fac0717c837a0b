"""Clients and the arbiter of the federated protocol."""
import random
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .._numeric import column_sums, moments
from .._validation import check_matrix
from ..critic import scatter_matrix
from ..exceptions import ArbiterUnavailable, DomainError, ProtocolError
from .messages import ARBITER, COORDINATOR, MessageKind, RoundMessage, client_address


@dataclass(frozen=True)
class LocalStats:
    n: int
    s: tuple
    o: tuple
    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class EncryptedStats:
    n: object
    s: tuple
    o: tuple
    u: tuple
    v: tuple


@dataclass(frozen=True)
class GlobalStats:
    """Decrypted aggregate ``G``: counts, exact sums, extrema and moments."""

    n: int
    n_distinct: int
    s: tuple
    o: tuple
    u: np.ndarray
    v: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray  # NaN where fewer than two distinct samples are known

    def degenerate(self):
        """Indices of metrics whose CRITIC weight is undefined under these stats."""
        bad = ~(self.u > self.v) | ~(self.sigma2 > 0)
        return [int(j) for j in np.flatnonzero(bad)]


def triu_pack(S):
    return S[np.triu_indices(S.shape[0])]


def triu_unpack(values, d):
    S = np.zeros((d, d))
    S[np.triu_indices(d)] = values
    return S + np.triu(S, 1).T


class Client:
    """A vehicle holding its own trips; only encrypted aggregates leave it."""

    def __init__(self, client_id, data, *, n_features=None, seed=None, fault=None):
        self.client_id = str(client_id)
        arr = np.asarray(data, dtype=float)
        if arr.size == 0:
            d = n_features if n_features is not None else (arr.shape[1] if arr.ndim == 2 else 0)
            arr = np.empty((0, d))
        self._data = check_matrix(arr)
        self._data.setflags(write=False)
        self.cached_global = None
        self.rng = random.Random(seed)
        self.fault = fault

    def __repr__(self):
        return f"Client({self.client_id!r}, n={self.n_samples})"

    @property
    def address(self):
        return client_address(self.client_id)

    @property
    def local_data(self):
        return self._data

    @property
    def n_samples(self):
        return self._data.shape[0]

    @property
    def n_features(self):
        return self._data.shape[1]

    def is_down(self, round_):
        return bool(self.fault is not None and self.fault(round_))

    @cached_property
    def local_stats(self):
        if self.n_samples == 0:
            return None
        s, o = column_sums(self._data)
        return LocalStats(self.n_samples, tuple(s), tuple(o), self._data.max(axis=0), self._data.min(axis=0))

    # -- replies ---------------------------------------------------------

    def stats_reply(self, round_, pk, codec):
        enc = client_round_stats(self, pk, codec)
        if enc is None:
            return None
        return RoundMessage(MessageKind.STATS_REPLY, round_, self.address, COORDINATOR, {"stats": enc})

    def covariance_reply(self, round_, pk, codec, g, mu_z):
        self.cached_global = g
        S, _ = client_covariance(self, g, mu_z)
        cts = tuple(pk.encrypt(codec.encode(float(x)), self.rng) for x in triu_pack(S))
        return RoundMessage(MessageKind.COVARIANCE_REPLY, round_, self.address, COORDINATOR, {"scatter": cts})

    def histogram_reply(self, round_, pk, edges):
        counts = local_histogram(self._data, edges)
        cts = tuple(tuple(pk.encrypt(int(c), self.rng) for c in row) for row in counts)
        return RoundMessage(MessageKind.HISTOGRAM_REPLY, round_, self.address, COORDINATOR, {"counts": cts})

    def score_reply(self, round_, model):
        if self.n_samples and self.n_features != model.n_metrics:
            err = f"client has {self.n_features} metrics, model expects {model.n_metrics}"
            return RoundMessage(MessageKind.SCORE_REPLY, round_, self.address, COORDINATOR, {"pairs": (), "error": err})
        scores = model.score(self._data) if self.n_samples else ()
        pairs = tuple((self.client_id, float(y)) for y in scores)
        return RoundMessage(MessageKind.SCORE_REPLY, round_, self.address, COORDINATOR, {"pairs": pairs})


def client_round_stats(client, pk, codec):
    """Encrypt a client's count, sums, sums of squares, maxima and minima."""
    st = client.local_stats
    if st is None:
        return None
    enc = lambda x: pk.encrypt(codec.encode(x), client.rng)  # noqa: E731
    return EncryptedStats(
        n=pk.encrypt(st.n, client.rng),
        s=tuple(enc(x) for x in st.s),
        o=tuple(enc(x) for x in st.o),
        u=tuple(enc(float(x)) for x in st.u),
        v=tuple(enc(float(x)) for x in st.v),
    )


def client_covariance(client, g, mu_z):
    """Raw scatter of the client's data about the global normalised mean."""
    width = g.u - g.v
    if np.any(~(width > 0)):
        raise DomainError("global range is zero on some metric")
    Z = (client.local_data - g.v) / width
    return scatter_matrix(Z, mu_z), client.n_samples


def local_histogram(X, edges):
    """Per-metric bin counts; values outside the edges clamp into the end bins."""
    out = []
    for j, e in enumerate(edges):
        e = np.asarray(e, dtype=float)
        x = np.clip(X[:, j], e[0], e[-1]) if X.shape[0] else np.empty(0)
        out.append(np.histogram(x, bins=e)[0])
    return out


class Arbiter:
    """Holds the private key; only ever decrypts aggregates and differences."""

    def __init__(self, keys, codec, *, fault=None):
        self.keys = keys
        self.codec = codec
        self.fault = fault
        self.decryptions = 0

    @property
    def public_key(self):
        return self.keys.public

    def _available(self, round_):
        if self.fault is not None and self.fault(round_):
            raise ArbiterUnavailable(f"arbiter did not answer in round {round_}")

    def _dec(self, c):
        self.decryptions += 1
        return self.keys.private.decrypt(c)

    def _sign(self, c):
        x = self.codec.decode_int(self._dec(c))
        return (x > 0) - (x < 0)

    def compare(self, query):
        """Signs of the encrypted differences in a MinMaxQuery."""
        if query.kind is not MessageKind.MINMAX_QUERY:
            raise ProtocolError(f"arbiter cannot compare a {query.kind.value}")
        self._available(query.round)
        p = query.payload
        body = {"u_sign": tuple(self._sign(c) for c in p["u_diff"]), "v_sign": tuple(self._sign(c) for c in p["v_diff"])}
        return RoundMessage(MessageKind.MINMAX_VERDICT, query.round, ARBITER, COORDINATOR, body)

    def open(self, query):
        if query.kind is not MessageKind.AGGREGATE_QUERY:
            raise ProtocolError(f"arbiter cannot open a {query.kind.value}")
        self._available(query.round)
        p = query.payload
        if p["what"] == "stats":
            result = self._open_stats(p["stats"], p["n_distinct"])
        elif p["what"] == "scatter":
            result = tuple(self.codec.decode_exact(self._dec(c)) for c in p["values"])
        elif p["what"] == "counts":
            result = tuple(tuple(self._dec(c) for c in row) for row in p["values"])
        elif p["what"] == "extrema":
            result = (
                np.array([float(self.codec.decode_exact(self._dec(c))) for c in p["u"]]),
                np.array([float(self.codec.decode_exact(self._dec(c))) for c in p["v"]]),
            )
        else:
            raise ProtocolError(f"unknown aggregate {p['what']!r}")
        return RoundMessage(MessageKind.AGGREGATE_RESULT, query.round, ARBITER, COORDINATOR, {"result": result})

    def _open_stats(self, enc, n_distinct_ct):
        n = self._dec(enc.n)
        nd = self._dec(n_distinct_ct)
        dec = lambda c: self.codec.decode_exact(self._dec(c))  # noqa: E731
        s = tuple(dec(c) for c in enc.s)
        o = tuple(dec(c) for c in enc.o)
        u = np.array([float(dec(c)) for c in enc.u])
        v = np.array([float(dec(c)) for c in enc.v])
        mu = np.full(len(s), np.nan)
        sigma2 = np.full(len(s), np.nan)
        if n > 0:
            for j in range(len(s)):
                if nd >= 2:
                    mu[j], sigma2[j] = moments(n, s[j], o[j], nd)
                else:
                    mu[j] = float(s[j] / n)
        return GlobalStats(n, nd, s, o, u, v, mu, sigma2)
