import math

import numpy as np
import pytest

from privtrain import models
from privtrain.dataio import FeatureDataset
from privtrain.mechanisms import ClipSpec, NoiseSpec
from privtrain.rng import substream
from privtrain.trainers import (
    DfaConfig,
    PateConfig,
    TrainerConfig,
    pate_epsilon,
    pate_shards,
    sgld_param_map,
    train_dpdfa,
    train_dpsgd,
    train_dpsgld,
    train_pate,
)


def small_linear_problem(seed=7, n=400, dim=10, n_test=150):
    w = substream(seed, "dir").standard_normal(dim)
    w /= np.linalg.norm(w)

    def gen(count, stream):
        y = stream.integers(0, 2, count)
        x = 0.5 * stream.standard_normal((count, dim)) + (2 * y - 1)[:, None] * w
        return FeatureDataset(x.astype(np.float32), y, 2)

    return gen(n, substream(seed, "tr")), gen(n_test, substream(seed, "te"))


def cfg_dpsgd(**kw):
    base = dict(
        clip=ClipSpec(0.1), noise=NoiseSpec(1.0, seed=3), lr=1.0,
        expected_batch=100, epochs=2, delta=1e-5,
    )
    base.update(kw)
    return TrainerConfig("dpsgd", **base)


class TestSgldParamMap:
    def test_paper_substitution(self):
        mapped = sgld_param_map(0.01, 0.1, 4096, 50000)
        assert mapped.lr == pytest.approx(500.0)
        assert mapped.sigma == pytest.approx(8.192)
        assert mapped.clip == 0.1

    def test_all_ones(self):
        assert sgld_param_map(1.0, 1.0, 100, 100).sigma == pytest.approx(1.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            sgld_param_map(0.0, 0.1, 10, 100)
        with pytest.raises(ValueError):
            sgld_param_map(0.1, -1.0, 10, 100)
        with pytest.raises(ValueError):
            sgld_param_map(0.1, 0.1, 200, 100)


class TestDpsgd:
    def test_mechanisms_disabled_equals_full_batch_gd(self):
        train, test = small_linear_problem()
        n = train.n
        config = cfg_dpsgd(
            clip=ClipSpec(1e6), noise=NoiseSpec(0.0, seed=5),
            expected_batch=n, lr=0.5, epochs=3,
        )
        model = models.init_linear(train.dim, 2, substream(5, "init"))
        final, trace = train_dpsgd(train, model, config, test)

        # plain full-batch gradient descent on the mean loss, same lr
        W, b = model.W1.copy(), model.b1.copy()
        onehot = np.eye(2)[train.labels]
        for _ in range(3):
            P = models.softmax(train.features @ W.T + b)
            G = (P - onehot) / n
            W = W - 0.5 * (G.T @ train.features)
            b = b - 0.5 * G.sum(axis=0)
        got = models.flatten_params(final)
        want = np.concatenate([W.ravel(), b])
        rel = np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-12)
        assert rel < 1e-6
        assert all(math.isinf(r.epsilon) for r in trace.records[1:])

    def test_zero_epochs_leaves_model_unchanged(self):
        train, test = small_linear_problem()
        model = models.init_linear(train.dim, 2, substream(1, "init"))
        final, trace = train_dpsgd(train, model, cfg_dpsgd(epochs=0), test)
        np.testing.assert_array_equal(
            models.flatten_params(final), models.flatten_params(model)
        )
        assert len(trace.records) == 1
        assert trace.records[0].epoch == 0
        assert trace.records[0].epsilon < 0.05

    def test_contribution_norms_bounded(self):
        train, test = small_linear_problem()
        config = cfg_dpsgd(clip=ClipSpec(0.05), epochs=1)
        model = models.init_linear(train.dim, 2, substream(2, "init"))
        seen = []

        def instrument(stats):
            seen.append(stats)
            assert np.all(stats.contribution_norms <= 0.05 + 1e-12)

        train_dpsgd(train, model, config, test, instrument=instrument)
        assert seen  # hook actually ran

    def test_trace_epsilon_matches_accountant(self):
        from privtrain.accountant import account_training

        train, test = small_linear_problem()
        config = cfg_dpsgd(epochs=3, expected_batch=100)
        model = models.init_linear(train.dim, 2, substream(4, "init"))
        _, trace = train_dpsgd(train, model, config, test)
        q = 100 / train.n
        spe = 4  # ceil(400 / 100)
        for record in trace.records:
            want = account_training(q, 1.0, record.epoch * spe, 1e-5).epsilon
            assert record.epsilon == pytest.approx(want, rel=1e-12)

    def test_epsilon_nondecreasing_and_reproducible(self):
        train, test = small_linear_problem()
        model = models.init_linear(train.dim, 2, substream(4, "init"))
        _, t1 = train_dpsgd(train, model, cfg_dpsgd(epochs=3), test)
        _, t2 = train_dpsgd(train, model, cfg_dpsgd(epochs=3), test)
        eps = [r.epsilon for r in t1.records]
        assert eps == sorted(eps)
        assert [r.epsilon for r in t2.records] == eps
        assert [r.test_accuracy for r in t2.records] == [
            r.test_accuracy for r in t1.records
        ]

    def test_different_seed_changes_trajectory(self):
        train, test = small_linear_problem()
        model = models.init_linear(train.dim, 2, substream(4, "init"))
        f1, _ = train_dpsgd(train, model, cfg_dpsgd(noise=NoiseSpec(1.0, seed=1)), test)
        f2, _ = train_dpsgd(train, model, cfg_dpsgd(noise=NoiseSpec(1.0, seed=2)), test)
        assert not np.array_equal(
            models.flatten_params(f1), models.flatten_params(f2)
        )

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverging_run_aborts_with_diagnostics(self):
        # noise scale large enough to overflow float64 logits in two steps
        train, test = small_linear_problem()
        config = cfg_dpsgd(lr=1e10, noise=NoiseSpec(1e300, seed=1), epochs=2)
        model = models.init_linear(train.dim, 2, substream(6, "init"))
        with pytest.raises(RuntimeError, match="non-finite"):
            train_dpsgd(train, model, config, test)

    def test_rejects_oversized_batch(self):
        train, test = small_linear_problem()
        model = models.init_linear(train.dim, 2, substream(6, "init"))
        with pytest.raises(ValueError):
            train_dpsgd(train, model, cfg_dpsgd(expected_batch=10_000), test)

    def test_rejects_wrong_framework_config(self):
        train, test = small_linear_problem()
        model = models.init_linear(train.dim, 2, substream(6, "init"))
        config = TrainerConfig("dpsgld", lr=0.01)
        with pytest.raises(ValueError):
            train_dpsgd(train, model, config, test)


class TestSgldEquivalence:
    def test_trajectories_match_under_param_map(self):
        train, test = small_linear_problem(n=500)
        eta, clip, batch = 0.002, 0.1, 50
        mapped = sgld_param_map(eta, clip, batch, train.n)
        sgld_cfg = TrainerConfig(
            "dpsgld", clip=ClipSpec(clip), noise=NoiseSpec(0.0, seed=11),
            lr=eta, expected_batch=batch, epochs=10, delta=1e-5,
        )
        sgd_cfg = TrainerConfig(
            "dpsgd", clip=ClipSpec(clip), noise=NoiseSpec(mapped.sigma, seed=11),
            lr=mapped.lr, expected_batch=batch, epochs=10, delta=1e-5,
        )
        model = models.init_linear(train.dim, 2, substream(5, "init"))
        f_sgld, t_sgld = train_dpsgld(train, model, sgld_cfg, test)
        f_sgd, t_sgd = train_dpsgd(train, model, sgd_cfg, test)
        a = models.flatten_params(f_sgld)
        b = models.flatten_params(f_sgd)
        assert np.max(np.abs(a - b)) / np.max(np.abs(b)) < 1e-6
        # identical accounted epsilon per epoch
        assert [r.epsilon for r in t_sgld.records] == [
            r.epsilon for r in t_sgd.records
        ]

    def test_lr_zero_rejected(self):
        with pytest.raises(ValueError):
            TrainerConfig("dpsgld", lr=0.0)


class TestDpdfa:
    def test_degenerates_to_backprop_with_transpose_feedback(self):
        train, test = small_linear_problem(n=300)
        mlp = models.init_mlp(train.dim, 12, 2, substream(8, "mlp"))
        dfa_cfg = TrainerConfig(
            "dpdfa", clip=ClipSpec(1e9), noise=NoiseSpec(0.0, seed=13),
            lr=0.5, expected_batch=50, epochs=4, delta=1e-5,
            dfa=DfaConfig(
                activation_clip=None, error_clip=None, feedback_scale=None,
                sync_feedback_to_output=True,
            ),
        )
        sgd_cfg = TrainerConfig(
            "dpsgd", clip=ClipSpec(1e9), noise=NoiseSpec(0.0, seed=13),
            lr=0.5, expected_batch=50, epochs=4, delta=1e-5,
        )
        f_dfa, t_dfa = train_dpdfa(train, mlp, dfa_cfg, test)
        f_sgd, t_sgd = train_dpsgd(train, mlp, sgd_cfg, test)
        assert np.max(
            np.abs(models.flatten_params(f_dfa) - models.flatten_params(f_sgd))
        ) <= 1e-10

    def test_epsilon_trace_matches_dpsgd_at_same_parameters(self):
        train, test = small_linear_problem(n=300)
        mlp = models.init_mlp(train.dim, 8, 2, substream(9, "mlp"))
        lin = models.init_linear(train.dim, 2, substream(9, "lin"))
        dfa_cfg = TrainerConfig(
            "dpdfa", clip=ClipSpec(0.1), noise=NoiseSpec(2.0, seed=3),
            lr=1.0, expected_batch=60, epochs=3, delta=1e-5,
        )
        sgd_cfg = TrainerConfig(
            "dpsgd", clip=ClipSpec(0.1), noise=NoiseSpec(2.0, seed=3),
            lr=1.0, expected_batch=60, epochs=3, delta=1e-5,
        )
        _, t_dfa = train_dpdfa(train, mlp, dfa_cfg, test)
        _, t_sgd = train_dpsgd(train, lin, sgd_cfg, test)
        assert [r.epsilon for r in t_dfa.records] == [
            r.epsilon for r in t_sgd.records
        ]

    def test_feedback_matrix_scaled_to_target(self):
        train, test = small_linear_problem(n=200)
        mlp = models.init_mlp(train.dim, 8, 2, substream(10, "mlp"))
        fb = models.draw_feedback(8, 2, substream(10, "fb"))
        config = TrainerConfig(
            "dpdfa", clip=ClipSpec(0.1), noise=NoiseSpec(1.0, seed=4),
            lr=0.5, expected_batch=50, epochs=1, delta=1e-5,
            dfa=DfaConfig(feedback_scale=0.5),
        )
        # scaled_to is exercised inside; just confirm the run works and the
        # provided matrix is not mutated
        before = fb.B.copy()
        train_dpdfa(train, mlp, config, test, feedback=fb)
        np.testing.assert_array_equal(fb.B, before)

    def test_contribution_norms_bounded(self):
        train, test = small_linear_problem(n=200)
        mlp = models.init_mlp(train.dim, 8, 2, substream(11, "mlp"))
        config = TrainerConfig(
            "dpdfa", clip=ClipSpec(0.07), noise=NoiseSpec(1.0, seed=4),
            lr=0.5, expected_batch=50, epochs=1, delta=1e-5,
        )

        def instrument(stats):
            assert np.all(stats.contribution_norms <= 0.07 + 1e-12)

        train_dpdfa(train, mlp, config, test, instrument=instrument)

    def test_rejects_linear_model(self):
        train, test = small_linear_problem(n=200)
        lin = models.init_linear(train.dim, 2, substream(12, "lin"))
        config = TrainerConfig("dpdfa", lr=0.5)
        with pytest.raises(ValueError):
            train_dpdfa(train, lin, config, test)


class TestPate:
    def test_shards_equal_and_disjoint(self):
        shards = pate_shards(1000, 10, seed=0)
        assert all(len(s) == 100 for s in shards)
        joined = np.concatenate(shards)
        assert len(np.unique(joined)) == 1000

    def test_shards_drop_remainder(self):
        shards = pate_shards(1003, 10, seed=0)
        assert all(len(s) == 100 for s in shards)

    def test_zero_noise_release_equals_consensus(self):
        from privtrain.trainers import pate_aggregate

        # unanimous teachers + zero aggregation noise: released labels are
        # exactly the consensus
        votes = np.tile(np.array([2, 0, 1, 1, 2]), (7, 1))
        released = pate_aggregate(votes, classes=3, agg_noise=0.0, seed=0)
        np.testing.assert_array_equal(released, [2, 0, 1, 1, 2])

    def test_zero_noise_student_learns_consensus(self):
        train, test = small_linear_problem(n=600)
        public = FeatureDataset(
            test.features, np.zeros(test.n, dtype=np.int64), 0
        )
        config = TrainerConfig(
            "pate", noise=NoiseSpec(0.0, seed=2), lr=0.5, epochs=30, delta=1e-5,
            pate=PateConfig(teachers=10, queries=100, agg_noise=0.0),
        )
        student, trace = train_pate(train, public, config, test)
        assert math.isinf(trace.records[-1].epsilon)
        assert trace.records[-1].test_accuracy > 0.9

    def test_epsilon_strictly_increases_with_queries(self):
        values = [pate_epsilon(q, 8.0, 1e-5) for q in (10, 50, 100, 400)]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_epsilon_uses_sqrt2_sensitivity(self):
        from privtrain.accountant import DEFAULT_ALPHAS, to_eps_delta, RdpProfile

        tau = 8.0
        queries = 25
        # eps(alpha) = alpha * 2 / (2 tau^2) per query
        eps = tuple(queries * a * 2 / (2 * tau * tau) for a in DEFAULT_ALPHAS)
        want = to_eps_delta(
            RdpProfile(tuple(float(a) for a in DEFAULT_ALPHAS), eps), 1e-5
        ).epsilon
        assert pate_epsilon(queries, tau, 1e-5) == pytest.approx(want, rel=1e-12)

    def test_query_budget_validated(self):
        train, test = small_linear_problem(n=600)
        public = FeatureDataset(test.features, np.zeros(test.n, dtype=np.int64), 0)
        config = TrainerConfig(
            "pate", lr=0.1, epochs=1,
            pate=PateConfig(teachers=5, queries=10_000, agg_noise=1.0),
        )
        with pytest.raises(ValueError):
            train_pate(train, public, config, test)

    def test_teachers_bounds(self):
        with pytest.raises(ValueError):
            PateConfig(teachers=1, queries=10, agg_noise=1.0)
        with pytest.raises(ValueError):
            pate_shards(10, 20, seed=0)

    def test_reproducible(self):
        train, test = small_linear_problem(n=600)
        public = FeatureDataset(test.features, np.zeros(test.n, dtype=np.int64), 0)
        config = TrainerConfig(
            "pate", noise=NoiseSpec(0.0, seed=6), lr=0.1, epochs=2, delta=1e-5,
            pate=PateConfig(teachers=8, queries=40, agg_noise=3.0),
        )
        s1, t1 = train_pate(train, public, config, test)
        s2, t2 = train_pate(train, public, config, test)
        np.testing.assert_array_equal(
            models.flatten_params(s1), models.flatten_params(s2)
        )
        assert t1.to_json() == t2.to_json()


class TestTraceSerialization:
    def test_csv_layout(self, tmp_path):
        train, test = small_linear_problem()
        model = models.init_linear(train.dim, 2, substream(1, "init"))
        _, trace = train_dpsgd(train, model, cfg_dpsgd(epochs=2), test)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "epoch,loss,test_acc,epsilon"
        assert len(lines) == 1 + len(trace.records)
        payload = trace.to_json()
        assert payload["delta"] == 1e-5
        assert [r["epoch"] for r in payload["records"]] == list(
            range(len(trace.records))
        )

    def test_append_rejects_decreasing_epsilon(self):
        from privtrain.trainers import EpochRecord, TrainingTrace

        trace = TrainingTrace(1e-5)
        trace.append(EpochRecord(0, 1.0, 0.5, 1.0))
        with pytest.raises(ValueError):
            trace.append(EpochRecord(1, 1.0, 0.5, 0.5))

    def test_best_accuracy_budget_filter(self):
        from privtrain.trainers import EpochRecord, TrainingTrace

        trace = TrainingTrace(1e-5)
        trace.append(EpochRecord(0, 1.0, 0.2, 0.1))
        trace.append(EpochRecord(1, 0.5, 0.9, 1.0))
        trace.append(EpochRecord(2, 0.4, 0.95, 2.0))
        assert trace.best_accuracy() == 0.95
        assert trace.best_accuracy(max_epsilon=1.5) == 0.9
