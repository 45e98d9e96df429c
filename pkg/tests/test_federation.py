import dataclasses
import typing

import numpy as np
import pytest

from fedspoof import domain, features, fusion, labels
from fedspoof.federation import (
    FederationConfig,
    GlobalModelState,
    LocalClient,
    QualityReport,
    RoundUpdate,
    SERVER_RECEIVABLE_MESSAGE_TYPES,
    fedavg,
    quality_gate,
    run_rounds,
    write_round_metrics,
)
from fedspoof.lstm import LstmModelParams, TrainConfig, init_params, param_count


def _update(client_id, vector, n=1, round_index=1, input_size=4, hidden_size=3):
    return RoundUpdate(
        client_id=client_id,
        round_index=round_index,
        params=LstmModelParams(input_size, hidden_size, np.asarray(vector, dtype=np.float32)),
        n_samples=n,
    )


def _rand_vec(rng, input_size=4, hidden_size=3):
    return rng.normal(0, 1, param_count(input_size, hidden_size)).astype(np.float32)


class TestFedavg:
    def test_identity_on_equal_inputs(self, rng):
        v = _rand_vec(rng)
        out = fedavg([_update(1, v, n=1), _update(2, v, n=50), _update(3, v, n=7)])
        assert np.array_equal(out.vector, v)

    def test_weighted_mean_arithmetic(self):
        size = param_count(4, 3)
        out = fedavg([_update(1, np.zeros(size), n=1), _update(2, np.ones(size), n=3)])
        np.testing.assert_array_equal(out.vector, np.full(size, 0.75, dtype=np.float32))

    def test_matches_float64_oracle(self, rng):
        for _ in range(20):
            k = int(rng.integers(2, 6))
            vecs = [_rand_vec(rng) for _ in range(k)]
            ns = rng.integers(1, 10_000, k)
            updates = [_update(i + 1, v, n=int(n)) for i, (v, n) in enumerate(zip(vecs, ns))]
            out = fedavg(updates).vector.astype(np.float64)
            oracle = sum(
                n * v.astype(np.float64) for v, n in zip(vecs, ns)
            ) / float(ns.sum())
            np.testing.assert_allclose(out, oracle, rtol=1e-7)

    def test_permutation_invariance_bitwise(self, rng):
        vecs = [_rand_vec(rng) for _ in range(4)]
        updates = [_update(i + 1, v, n=i + 2) for i, v in enumerate(vecs)]
        a = fedavg(updates)
        b = fedavg(list(reversed(updates)))
        assert np.array_equal(a.vector, b.vector)

    def test_weight_scale_invariance_bitwise(self, rng):
        vecs = [_rand_vec(rng) for _ in range(3)]
        base = [_update(i + 1, v, n=(i + 1) * 3) for i, v in enumerate(vecs)]
        scaled = [_update(i + 1, v, n=(i + 1) * 3 * 17) for i, v in enumerate(vecs)]
        assert np.array_equal(fedavg(base).vector, fedavg(scaled).vector)

    def test_unweighted_mean_option(self, rng):
        size = param_count(4, 3)
        updates = [_update(1, np.zeros(size), n=1), _update(2, np.ones(size), n=99)]
        out = fedavg(updates, weighted=False)
        np.testing.assert_array_equal(out.vector, np.full(size, 0.5, dtype=np.float32))

    def test_rejects_bad_inputs(self, rng):
        with pytest.raises(ValueError, match="at least one"):
            fedavg([])
        v = _rand_vec(rng)
        with pytest.raises(ValueError, match="duplicate"):
            fedavg([_update(1, v), _update(1, v)])
        with pytest.raises(ValueError, match="rounds"):
            fedavg([_update(1, v, round_index=1), _update(2, v, round_index=2)])
        other = rng.normal(0, 1, param_count(5, 3)).astype(np.float32)
        with pytest.raises(ValueError, match="layout"):
            fedavg([_update(1, v), _update(2, other, input_size=5)])
        with pytest.raises(ValueError, match="n_samples"):
            _update(1, v, n=0)


def _client_from_windows(client_id, x, y, seed=0):
    # higher rate than the full-size default so micro nets converge quickly
    return LocalClient(
        client_id,
        x,
        y,
        TrainConfig(batch_size=16, base_learning_rate=5e-3, rng_seed=seed),
    )


def _separable_client(rng, client_id, n=120, seed=0):
    """Windows whose first feature at the last step predicts the label."""
    x = rng.uniform(0, 1, (n, 4, feat_dim := 6)).astype(np.float32)
    y = (x[:, -1, 0] > 0.5).astype(np.float32) * 0.9 + 0.05
    return _client_from_windows(client_id, x, y, seed=seed)


class TestQualityGate:
    def test_current_global_accepted_against_itself(self, rng):
        clients = [_separable_client(rng, i + 1, seed=i) for i in range(3)]
        params = init_params(0, 6, 4)
        state = GlobalModelState(0, params)
        aucs = [c.score_candidate(params, 256)[1] for c in clients]
        state.last_auc = float(np.mean(aucs))
        candidate = RoundUpdate(1, 1, params, n_samples=10)
        accepted, reports = quality_gate(candidate, clients, state, threshold_delta=0.02)
        assert accepted
        assert {r.evaluating_client_id for r in reports} == {2, 3}
        assert all(r.candidate_client_id == 1 for r in reports)

    def test_single_class_evaluator_abstains(self, rng):
        good = _separable_client(rng, 1)
        degenerate = _client_from_windows(
            2, rng.uniform(0, 1, (40, 4, 6)).astype(np.float32), np.zeros(40, np.float32)
        )
        state = GlobalModelState(0, init_params(0, 6, 4), last_auc=0.0)
        candidate = RoundUpdate(1, 1, init_params(1, 6, 4), n_samples=10)
        accepted, reports = quality_gate(candidate, [good, degenerate], state, 0.02)
        assert accepted  # the only evaluator abstained -> accept by default
        assert reports == []

    def test_needs_an_evaluator(self, rng):
        client = _separable_client(rng, 1)
        state = GlobalModelState(0, init_params(0, 6, 4))
        with pytest.raises(ValueError, match="evaluator"):
            quality_gate(RoundUpdate(1, 1, init_params(0, 6, 4), 5), [client], state, 0.02)

    def test_shuffled_parameters_rejected(self, rng):
        # train a competent global, then gate a parameter-shuffled clone of it
        clients = [_separable_client(rng, i + 1, n=240, seed=i) for i in range(3)]
        cfg = FederationConfig(rounds=5, local_epochs=6, gate_enabled=False, init_seed=0)
        state, _ = run_rounds(clients, cfg, input_size=6, hidden_size=8)
        aucs = [c.score_candidate(state.params, 256)[1] for c in clients]
        state.last_auc = float(np.mean(aucs))
        assert state.last_auc > 0.8

        shuffled = state.params.vector[rng.permutation(state.params.vector.size)]
        bad = RoundUpdate(1, 6, LstmModelParams(6, 8, shuffled), n_samples=240)
        accepted, reports = quality_gate(bad, clients, state, threshold_delta=0.02)
        assert not accepted
        assert np.mean([r.auc_vs_reference for r in reports]) < state.last_auc - 0.02

    def test_report_validates_auc_range(self):
        with pytest.raises(ValueError):
            QualityReport(1, 2, np.zeros(3), 1.2)


class TestRunRounds:
    def test_single_client_round_equals_local_training(self, rng):
        client = _separable_client(rng, 1, seed=42)
        cfg = FederationConfig(rounds=1, local_epochs=2, gate_enabled=False, init_seed=7)
        state, rows = run_rounds([client], cfg, input_size=6, hidden_size=4)
        expected = client.train(
            init_params(7, 6, 4), 1, 2, announced_mean_size=float(client.n_train)
        )
        assert np.array_equal(state.params.vector, expected.params.vector)
        assert rows[0]["accepted_clients"] == 1

    def test_identical_clients_keep_global_equal_to_local(self, rng):
        x = rng.uniform(0, 1, (100, 4, 6)).astype(np.float32)
        y = (x[:, -1, 0] > 0.5).astype(np.float32)
        clients = [_client_from_windows(i + 1, x, y, seed=5) for i in range(3)]
        cfg = FederationConfig(rounds=2, local_epochs=1, gate_enabled=False, init_seed=1)
        state, _ = run_rounds(clients, cfg, input_size=6, hidden_size=4)
        solo = clients[0].train(init_params(1, 6, 4), 1, 1, float(clients[0].n_train))
        follow = clients[0].train(solo.params, 2, 1, float(clients[0].n_train))
        assert np.array_equal(state.params.vector, follow.params.vector)

    def test_gate_disabled_equals_plain_fedavg(self, rng):
        clients = [_separable_client(rng, i + 1, seed=i) for i in range(2)]
        cfg = FederationConfig(rounds=2, local_epochs=1, gate_enabled=False, init_seed=3)
        state, _ = run_rounds(clients, cfg, input_size=6, hidden_size=4)

        params = init_params(3, 6, 4)
        mean_n = float(np.mean([c.n_train for c in clients]))
        for round_index in (1, 2):
            updates = [c.train(params, round_index, 1, mean_n) for c in clients]
            params = fedavg(updates)
        assert np.array_equal(state.params.vector, params.vector)

    def test_no_trainable_client_rejected(self):
        empty = LocalClient(1, np.empty((0, 4, 6), np.float32), np.empty(0, np.float32),
                            TrainConfig())
        with pytest.raises(ValueError, match="no client"):
            run_rounds([empty], FederationConfig(rounds=1), input_size=6, hidden_size=4)

    def test_periodic_global_checkpoints(self, rng, tmp_path):
        from fedspoof.lstm import load_checkpoint

        clients = [_separable_client(rng, i + 1, seed=i) for i in range(2)]
        cfg = FederationConfig(rounds=4, local_epochs=1, gate_enabled=False, init_seed=3,
                               checkpoint_every=2, checkpoint_dir=str(tmp_path))
        state, _ = run_rounds(clients, cfg, input_size=6, hidden_size=4)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["global_round_0002.ckpt", "global_round_0004.ckpt"]
        final = load_checkpoint(str(tmp_path / "global_round_0004.ckpt"))
        assert np.array_equal(final.vector, state.params.vector)

    def test_corruption_hook_applies_from_round(self, rng):
        clients = [_separable_client(rng, i + 1, seed=i) for i in range(2)]
        base = FederationConfig(rounds=2, local_epochs=1, gate_enabled=False, init_seed=3)
        clean_state, _ = run_rounds(clients, base, input_size=6, hidden_size=4)
        corrupted_cfg = dataclasses.replace(base, corrupt_client_id=2, corrupt_from_round=2)
        corrupt_state, _ = run_rounds(clients, corrupted_cfg, input_size=6, hidden_size=4)
        assert not np.array_equal(clean_state.params.vector, corrupt_state.params.vector)

    def test_metrics_rows_and_csv(self, rng, tmp_path):
        clients = [_separable_client(rng, i + 1, seed=i) for i in range(2)]
        cfg = FederationConfig(rounds=3, local_epochs=1, gate_enabled=True,
                               gate_warmup_rounds=1, init_seed=0)
        _, rows = run_rounds(clients, cfg, input_size=6, hidden_size=4)
        assert [r["round"] for r in rows] == [1, 2, 3]
        assert np.isnan(rows[0]["mean_gate_auc"])  # warm-up round
        assert not np.isnan(rows[1]["mean_gate_auc"])
        path = tmp_path / "rounds.csv"
        write_round_metrics(rows, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "round,accepted_clients,mean_gate_auc,global_val_mse"
        assert lines[1].split(",")[2] == "na"
        assert len(lines) == 4


FORBIDDEN_MESSAGE_TYPES = (
    domain.GeoPos,
    domain.PlatformSample,
    domain.SignalProps,
    domain.Trace,
    fusion.FusedEstimate,
    features.NormalizationState,
    labels.LabelSeries,
    labels.LabelNorm,
)

FORBIDDEN_FIELD_TOKENS = (
    "lat", "lon", "pos", "gnss", "net", "coord", "feature", "window",
    "accel", "omega", "speed", "trace", "signal", "sensor",
)


def iter_message_fields(message_type, seen=None):
    seen = seen if seen is not None else set()
    if message_type in seen or not dataclasses.is_dataclass(message_type):
        return
    seen.add(message_type)
    hints = typing.get_type_hints(message_type)
    for field in dataclasses.fields(message_type):
        yield message_type, field.name, hints[field.name]
        yield from iter_message_fields(hints[field.name], seen)


class TestPrivacyContract:
    def test_server_receivable_types_carry_no_position_data(self):
        assert RoundUpdate in SERVER_RECEIVABLE_MESSAGE_TYPES
        assert QualityReport in SERVER_RECEIVABLE_MESSAGE_TYPES
        for msg_type in SERVER_RECEIVABLE_MESSAGE_TYPES:
            for owner, name, hint in iter_message_fields(msg_type):
                assert hint not in FORBIDDEN_MESSAGE_TYPES, f"{owner.__name__}.{name}"
                lowered = name.lower()
                for token in FORBIDDEN_FIELD_TOKENS:
                    assert token not in lowered, f"{owner.__name__}.{name}"
