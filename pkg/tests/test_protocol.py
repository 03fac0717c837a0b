import itertools
from fractions import Fraction

import numpy as np
import pytest

from feddrivescore.critic import ScoringModel, critic_weights, summarize, train_central
from feddrivescore.exceptions import (
    DegenerateMetricError,
    DomainError,
    KeyMismatchError,
    PrivacyViolation,
    ProtocolError,
    TrainingError,
)
from feddrivescore.federated import (
    Client,
    Coordinator,
    EncryptedStats,
    MessageKind,
    RoundConfig,
    RoundMessage,
    Transcript,
    aggregate_encrypted_stats,
    client_covariance,
    client_round_stats,
    federated_infer,
    histogram_edges,
    run_federated,
    secure_histogram,
    secure_minmax_update,
    suggest_distribution,
    update_global_weights,
)
from feddrivescore.federated.messages import iter_leaves
from feddrivescore.federated.parties import Arbiter, local_histogram, triu_pack, triu_unpack
from feddrivescore.paillier import Ciphertext, FixedPointCodec, keygen
from feddrivescore.specs import MetricSpec

SPECS2 = (
    MetricSpec("a", "negative", "exponential"),
    MetricSpec("b", "positive", "normal"),
)
SPECS1 = SPECS2[:1]


@pytest.fixture(scope="module")
def keys():
    return keygen(512, rng_seed=77)


@pytest.fixture(scope="module")
def codec(keys):
    return FixedPointCodec(keys.public.n, 2**64)


def dec(keys, codec, c):
    return codec.decode_exact(keys.private.decrypt(c))


def small_population(seed=0, K=4, rows=(6, 9, 3, 12)):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(K):
        X = np.column_stack([rng.exponential(0.5 + k, rows[k]), rng.normal(50 + 5 * k, 4, rows[k])])
        out.append(X)
    return out


class TestClientStats:
    def test_hand_example(self, keys, codec):
        enc = client_round_stats(Client("a", [[1.0], [3.0]]), keys.public, codec)
        assert keys.private.decrypt(enc.n) == 2
        assert [dec(keys, codec, c) for c in (enc.s[0], enc.o[0], enc.u[0], enc.v[0])] == [4, 10, 3, 1]

    def test_single_sample(self, keys, codec):
        enc = client_round_stats(Client("a", [[2.5, -1.0]]), keys.public, codec)
        assert [dec(keys, codec, c) for c in enc.u] == [dec(keys, codec, c) for c in enc.v] == [2.5, -1]

    def test_empty_client_does_not_reply(self, keys, codec):
        c = Client("a", np.empty((0, 2)))
        assert client_round_stats(c, keys.public, codec) is None
        assert c.stats_reply(1, keys.public, codec) is None

    def test_local_data_is_read_only(self):
        c = Client("a", [[1.0]])
        with pytest.raises(ValueError):
            c.local_data[0, 0] = 5


class TestAggregation:
    def _acc(self, pk, d=1):
        z = lambda: pk.encrypt(0)  # noqa: E731
        return EncryptedStats(z(), tuple(z() for _ in range(d)), tuple(z() for _ in range(d)), None, None)

    def test_sum_of_counts(self, keys, codec):
        pk = keys.public
        replies = [client_round_stats(Client(i, np.ones((n, 1))), pk, codec) for i, n in (("a", 2), ("b", 3))]
        acc = aggregate_encrypted_stats(pk, self._acc(pk), replies)
        assert keys.private.decrypt(acc.n) == 5
        assert dec(keys, codec, acc.s[0]) == 5

    def test_no_replies_leaves_state(self, keys):
        acc = self._acc(keys.public)
        assert aggregate_encrypted_stats(keys.public, acc, []) == acc

    def test_foreign_key_rejected(self, keys, codec):
        other = keygen(512, rng_seed=78)
        r = client_round_stats(Client("a", [[1.0]]), other.public, FixedPointCodec(other.public.n, 2**64))
        with pytest.raises(KeyMismatchError):
            aggregate_encrypted_stats(keys.public, self._acc(keys.public), [r])

    def test_resampled_client_accumulates(self, keys):
        coord = Coordinator([np.array([[1.0], [3.0]])], SPECS1, RoundConfig(T=2, tau=1.0), keys)
        state = coord.initial_state()
        for t in (1, 2):
            state = coord.run_round(t, state, coord.clients)
            assert keys.private.decrypt(state.acc.n) == 2 * t
        assert state.stats.n == 4 and state.stats.n_distinct == 2
        assert state.stats.sigma2[0] == 2.0  # unbiased over the two distinct trips


class TestMinMax:
    def _reply(self, keys, codec, u, v):
        enc = lambda x: keys.public.encrypt(codec.encode(x))  # noqa: E731
        return EncryptedStats(None, (), (), (enc(u),), (enc(v),))

    def _run(self, keys, codec, incumbent, reply):
        arb = Arbiter(keys, codec)
        first = self._reply(keys, codec, *incumbent)
        u, v = secure_minmax_update(keys.public, first.u, first.v, [self._reply(keys, codec, *reply)], arb)
        return first, u, v, arb

    def test_larger_max_replaces(self, keys, codec):
        _, u, v, _ = self._run(keys, codec, (5, 2), (7, 3))
        assert dec(keys, codec, u[0]) == 7
        assert dec(keys, codec, v[0]) == 2

    def test_tie_keeps_incumbent(self, keys, codec):
        first, u, v, _ = self._run(keys, codec, (5, 2), (5, 2))
        assert u[0] is first.u[0] and v[0] is first.v[0]

    def test_arbiter_sees_only_differences(self, keys, codec):
        t = Transcript(keep_messages=True)
        arb = Arbiter(keys, codec)
        replies = [self._reply(keys, codec, x, x) for x in (4.0, 9.0, 1.0)]
        u, v = secure_minmax_update(keys.public, None, None, replies, arb, transcript=t)
        assert (dec(keys, codec, u[0]), dec(keys, codec, v[0])) == (9, 1)
        assert t.kinds() == ["MinMaxQuery", "MinMaxVerdict"] * 2
        # two comparisons per query (u and v), nothing else decrypted
        assert arb.decryptions == 4
        assert set(t.messages[1].payload) == {"u_sign", "v_sign"}

    def test_no_replies(self, keys, codec):
        assert secure_minmax_update(keys.public, None, None, [], Arbiter(keys, codec)) == (None, None)


class TestCovariance:
    def test_constant_client_at_mean(self):
        from feddrivescore.federated.parties import GlobalStats

        g = GlobalStats(4, 4, (), (), np.array([2.0, 4.0]), np.array([0.0, 0.0]), None, None)
        c = Client("a", [[1.0, 2.0], [1.0, 2.0]])
        S, n = client_covariance(c, g, np.array([0.5, 0.5]))
        assert n == 2
        np.testing.assert_array_equal(S, np.zeros((2, 2)))

    def test_zero_range_rejected(self):
        from feddrivescore.federated.parties import GlobalStats

        g = GlobalStats(2, 2, (), (), np.array([1.0]), np.array([1.0]), None, None)
        with pytest.raises(DomainError):
            client_covariance(Client("a", [[1.0]]), g, np.array([0.0]))

    def test_split_merge_equals_central(self, rng):
        from feddrivescore.federated.parties import GlobalStats

        X = rng.normal(size=(40, 3))
        u, v = X.max(axis=0), X.min(axis=0)
        Z = (X - v) / (u - v)
        mu_z = Z.mean(axis=0)
        g = GlobalStats(40, 40, (), (), u, v, None, None)
        parts = [client_covariance(Client(i, X[sl]), g, mu_z) for i, sl in (("a", slice(0, 17)), ("b", slice(17, 40)))]
        pooled = sum(S for S, _ in parts) / (sum(n for _, n in parts) - 1)
        np.testing.assert_allclose(pooled, np.cov(Z, rowvar=False), atol=1e-9)

    def test_triu_roundtrip(self, rng):
        A = rng.normal(size=(4, 4))
        S = A + A.T
        np.testing.assert_array_equal(triu_unpack(triu_pack(S), 4), S)


class TestWeightRecursion:
    def test_first_round_takes_round_weights(self):
        np.testing.assert_array_equal(update_global_weights([0.1, 0.9], 1, [0.7, 0.3]), [0.7, 0.3])

    def test_second_round(self):
        np.testing.assert_allclose(update_global_weights([0.7, 0.3], 2, [0.5, 0.5]), [0.6, 0.4], atol=1e-15)

    def test_recursion_is_running_mean(self, rng):
        rounds = rng.dirichlet(np.ones(5), size=300)
        w = np.full(5, 0.2)
        for t, wr in enumerate(rounds, start=1):
            w = update_global_weights(w, t, wr)
        np.testing.assert_allclose(w, rounds.mean(axis=0), atol=1e-12)

    def test_round_index_starts_at_one(self):
        with pytest.raises(ValueError):
            update_global_weights([1.0], 0, [1.0])


class TestHistogram:
    def test_elementwise_sum(self, keys):
        edges = [np.array([0.0, 1.0, 2.0])]
        a = np.array([[0.5], [1.5], [1.6]])  # counts [1, 2]
        b = np.array([[0.1], [0.2], [0.3], [1.1], [1.2], [1.3], [1.4]])  # counts [3, 4]
        assert local_histogram(a, edges)[0].tolist() == [1, 2]
        (counts,) = secure_histogram([a, b], SPECS1, edges, keys)
        assert counts.tolist() == [4, 6]

    def test_empty_client_contributes_zeros(self, keys):
        edges = [np.array([0.0, 1.0, 2.0])]
        (counts,) = secure_histogram([np.array([[0.5]]), np.empty((0, 1))], SPECS1, edges, keys)
        assert counts.tolist() == [1, 0]

    def test_conservation_and_clamping(self, keys, rng):
        clients = small_population()
        edges = [np.linspace(0, 1, 5), np.linspace(45, 55, 5)]  # deliberately too narrow
        counts = secure_histogram(clients, SPECS2, edges, keys)
        total = sum(len(c) for c in clients)
        assert [int(c.sum()) for c in counts] == [total, total]

    def test_secure_extrema(self, keys):
        clients = small_population()
        coord = Coordinator(clients, SPECS2, RoundConfig(T=1, tau=1.0), keys)
        u, v = coord.secure_extrema()
        X = np.vstack(clients)
        np.testing.assert_array_equal(u, X.max(axis=0))
        np.testing.assert_array_equal(v, X.min(axis=0))
        edges = histogram_edges(u, v, 10)
        assert all(len(e) == 11 for e in edges)

    def test_suggest_distribution(self, rng):
        x = rng.exponential(2.0, 5000)
        counts, edges = np.histogram(x, bins=30, range=(0, x.max()))
        assert suggest_distribution(counts, edges) == "exponential"
        y = rng.normal(50, 5, 5000)
        counts, edges = np.histogram(y, bins=30)
        assert suggest_distribution(counts, edges) == "normal"
        with pytest.raises(ProtocolError):
            suggest_distribution(np.zeros(3), np.arange(4.0))


class TestTraining:
    def test_full_participation_equals_central(self, keys):
        clients = small_population()
        central = train_central(np.vstack(clients), SPECS2)
        res = run_federated(clients, SPECS2, RoundConfig(T=5, tau=1.0), keys)
        m = res.model
        for attr in ("mu", "sigma", "weights", "u", "v"):
            np.testing.assert_allclose(getattr(m, attr), getattr(central, attr), rtol=0, atol=1e-9)
        assert res.updated.all() and res.retries == 0
        assert m.mode == "federated" and m.trained_rounds == 5

    def test_single_client_equals_central(self, keys, rng):
        X = np.column_stack([rng.exponential(1.0, 30), rng.normal(10, 2, 30)])
        central = train_central(X, SPECS2)
        m = run_federated([X], SPECS2, RoundConfig(T=3, tau=0.5), keys).model
        np.testing.assert_allclose(m.weights, central.weights, atol=1e-9)
        np.testing.assert_allclose(m.score(X), central.score(X), atol=1e-9)

    def test_round_weights_come_from_pooled_round_data(self, keys):
        # one update with every client: weights are CRITIC on the full data
        clients = small_population()
        X = np.vstack(clients)
        st = summarize(X)
        Z = (X - st.v) / (st.u - st.v)
        w = critic_weights(Z.std(axis=0, ddof=1), np.corrcoef(Z, rowvar=False))
        res = run_federated(clients, SPECS2, RoundConfig(T=1, tau=1.0), keys)
        np.testing.assert_allclose(res.weight_history[0], w, atol=1e-9)

    def test_selection_size_and_determinism(self, keys):
        clients = small_population(K=4, rows=(5, 5, 5, 5))
        cfg = RoundConfig(T=6, tau=0.5, rng_seed=3)
        a = run_federated(clients, SPECS2, cfg, keys)
        b = run_federated(clients, SPECS2, cfg, keys)
        assert all(len(s) == 2 for s in a.selections)
        assert a.selections == b.selections
        np.testing.assert_array_equal(a.weight_history, b.weight_history)
        assert RoundConfig(T=1, tau=0.1).n_selected(30) == 3
        assert RoundConfig(T=1, tau=0.01).n_selected(30) == 1

    def test_accumulated_count_matches_selections(self, keys):
        clients = small_population()
        sizes = {f"{k:03d}": len(c) for k, c in enumerate(clients)}
        res = run_federated(clients, SPECS2, RoundConfig(T=7, tau=0.5, rng_seed=1), keys)
        assert res.stats.n == sum(sizes[c] for sel in res.selections for c in sel)

    def test_arbiter_outage_rolls_back_and_retries(self, keys):
        clients = small_population()
        cfg = RoundConfig(T=4, tau=1.0)
        clean = run_federated(clients, SPECS2, cfg, keys)
        calls = itertools.count()
        flaky = run_federated(clients, SPECS2, cfg, keys, arbiter_fault=lambda r: r == 2 and next(calls) < 3)
        assert flaky.retries >= 1
        np.testing.assert_array_equal(flaky.weight_history, clean.weight_history)
        assert flaky.stats.n == clean.stats.n

    def test_client_outage_majority_aborts_round(self, keys):
        down = itertools.count()
        clients = [
            Client(f"{k:03d}", X, seed=k, fault=(lambda r: r == 1 and next(down) < 3) if k < 3 else None)
            for k, X in enumerate(small_population())
        ]
        res = run_federated(clients, SPECS2, RoundConfig(T=2, tau=1.0), keys)
        assert res.retries == 1
        assert res.stats.n == 2 * sum(c.n_samples for c in clients)

    def test_persistent_failure_raises(self, keys):
        with pytest.raises(TrainingError):
            run_federated(small_population(), SPECS2, RoundConfig(T=2, tau=1.0, max_retries=2), keys,
                          arbiter_fault=lambda r: True)

    def test_empty_clients_are_skipped(self, keys):
        clients = small_population() + [np.empty((0, 2))]
        central = train_central(np.vstack(clients[:-1]), SPECS2)
        res = run_federated(clients, SPECS2, RoundConfig(T=2, tau=1.0), keys)
        assert res.retries == 0
        np.testing.assert_allclose(res.model.weights, central.weights, atol=1e-9)

    def test_all_empty(self, keys):
        with pytest.raises(TrainingError):
            run_federated([np.empty((0, 2))] * 3, SPECS2, RoundConfig(T=1, tau=1.0), keys)

    def test_degenerate_metric_named(self, keys):
        clients = [np.column_stack([np.arange(4.0), np.full(4, 7.0)]) for _ in range(2)]
        with pytest.raises(DegenerateMetricError, match="b"):
            run_federated(clients, SPECS2, RoundConfig(T=2, tau=1.0), keys)


@pytest.fixture(scope="module")
def run(keys):
    # sizes chosen so no sum of client counts equals a single client's count
    clients = small_population(seed=5, rows=(6, 10, 17, 31))
    t = Transcript(keep_messages=True)
    res = run_federated(clients, SPECS2, RoundConfig(T=4, tau=0.5, rng_seed=2), keys, transcript=t)
    federated_infer(res.model, clients, transcript=t, round_=5)
    return clients, t


class TestPrivacy:
    def test_client_messages_are_ciphertext_only(self, run):
        _, t = run
        for m in t.messages:
            if m.sender.startswith("client:") and m.kind is not MessageKind.SCORE_REPLY:
                assert all(isinstance(x, Ciphertext) for x in iter_leaves(m.payload))

    def test_no_local_statistic_anywhere(self, run):
        clients, t = run
        secret = set()
        for X in clients:
            secret.add(float(len(X)))
            secret.update(float(x) for x in X.sum(axis=0))
            secret.update(float(x) for x in (X**2).sum(axis=0))
            secret.update(float(x) for x in X.ravel())
            secret.update(float(x) for x in X.mean(axis=0))
        # the running global max/min is always some client's max/min; the arbiter opens it by design
        allowed = {float(x) for X in clients for x in (*X.max(axis=0), *X.min(axis=0))}
        for m in t.messages:
            if m.kind is MessageKind.SCORE_REPLY:
                continue
            for leaf in iter_leaves(m.payload):
                if isinstance(leaf, (Ciphertext, str, bool)) or leaf is None:
                    continue
                x = float(leaf)
                assert x in allowed or x not in secret, (m.kind, x)

    def test_score_replies_are_id_score_pairs(self, run):
        _, t = run
        replies = [m for m in t.messages if m.kind is MessageKind.SCORE_REPLY]
        assert len(replies) == 4
        for m in replies:
            assert set(m.payload) == {"pairs"}
            assert all(isinstance(i, str) and isinstance(s, float) for i, s in m.payload["pairs"])

    def test_plaintext_client_payload_refused(self):
        with pytest.raises(PrivacyViolation):
            RoundMessage(MessageKind.STATS_REPLY, 1, "client:x", "coordinator", {"n": 3})
        with pytest.raises(PrivacyViolation):
            RoundMessage(MessageKind.SCORE_REPLY, 1, "client:x", "coordinator", {"pairs": (("x", 0.5),), "X": [1.0]})
        with pytest.raises(PrivacyViolation):
            RoundMessage(MessageKind.MODEL_BROADCAST, 1, "client:x", "coordinator", {})

    def test_transcript_records(self, run, tmp_path):
        _, t = run
        path = tmp_path / "t.jsonl"
        t.write(path)
        import json

        recs = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(recs) == len(t)
        for r in recs:
            assert {"round", "kind", "sender", "recipient", "bytes"} <= set(r)
            if r["kind"] == "StatsReply":
                assert len(r["digest"]) == 16
        assert {"SelectRequest", "StatsReply", "MinMaxQuery", "MinMaxVerdict", "MomentsBroadcast",
                "CovarianceReply", "WeightsBroadcast", "ModelBroadcast", "ScoreReply"} <= set(t.kinds())


class TestInference:
    def _model(self):
        return ScoringModel(
            specs=SPECS2, weights=np.array([0.6, 0.4]), mu=np.array([1.0, 50.0]), sigma=np.array([1.0, 5.0]),
            u=np.array([5.0, 70.0]), v=np.array([0.0, 30.0]),
        )

    def test_scores_match_local_bit_for_bit(self):
        model = self._model()
        clients = small_population()
        pairs = federated_infer(model, clients)
        expected = [(f"{k:03d}", float(y)) for k, X in enumerate(clients) for y in model.score(X)]
        assert pairs == expected

    def test_single_trip_reply(self):
        model = self._model()
        X = np.array([[0.5, 52.0]])
        (pair,) = federated_infer(model, {"driver-7": X})
        assert pair == ("driver-7", float(model.score(X)[0]))

    def test_empty_client(self):
        assert federated_infer(self._model(), {"a": np.empty((0, 2))}) == []

    def test_dimension_mismatch_is_a_client_error(self):
        clients = {"a": np.ones((2, 3)), "b": np.ones((1, 2))}
        with pytest.raises(ProtocolError, match="a"):
            federated_infer(self._model(), clients)
        t = Transcript(keep_messages=True)
        pairs = federated_infer(self._model(), clients, transcript=t, errors="collect")
        assert [p[0] for p in pairs] == ["b"]
        assert "error" in t.messages[1].payload


def test_fixed_point_sums_are_exact(keys, codec):
    # the protocol codec keeps float sums exact: 0.1 + 0.2 decodes to the exact dyadic sum
    pk = keys.public
    c = pk.add(pk.encrypt(codec.encode(0.1)), pk.encrypt(codec.encode(0.2)))
    assert dec(keys, codec, c) == Fraction(round(0.1 * 2**64) + round(0.2 * 2**64), 2**64)
