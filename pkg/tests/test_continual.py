"""Habituation, synaptic importance, replay, and the incremental loop."""

import numpy as np
import pytest

from evcl.autodiff import Parameter, Tape, backward, mse
from evcl.continual import (
    PRESETS,
    EpisodeSchedule,
    ForeignClassInSlice,
    HabituationState,
    MethodConfig,
    NoTrainedModel,
    ReplayVAE,
    ScheduleClassMissing,
    SIState,
    evaluate,
    gaussian_kl,
    generate_replay,
    habituation_decay,
    make_schedule,
    run_cil,
    scale_unit_gradients,
    select_habituated,
    si_accumulate,
    si_consolidate,
    si_penalty,
    train_episode,
)
from evcl.contrastive import FeatureTable
from evcl.optim import AdamState, sgd_step


def _blob_tables(rng, n_classes=4, dim=8, n_train=12, n_test=8):
    """Well-separated gaussian blobs so short runs can actually learn."""
    centers = rng.normal(0.0, 3.0, (n_classes, dim))

    def make(n_per):
        feats, labels = [], []
        for c in range(n_classes):
            feats.append(centers[c] + rng.normal(0.0, 0.3, (n_per, dim)))
            labels.append(np.full(n_per, c))
        return FeatureTable(np.concatenate(feats), np.concatenate(labels))

    return make(n_train), make(n_test)


class TestSchedule:
    def test_make_schedule_partitions_all_classes(self):
        sched = make_schedule(10, 2, seed=3)
        assert len(sched) == 5
        assert sched.all_classes == list(range(10))
        for ep in sched.episodes:
            assert len(ep) == 2

    def test_make_schedule_seed_changes_order(self):
        assert make_schedule(10, 2, 0).episodes != make_schedule(10, 2, 1).episodes

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError):
            make_schedule(10, 3, 0)

    def test_duplicate_class_rejected(self):
        with pytest.raises(ValueError):
            EpisodeSchedule(((0, 1), (1, 2)))

    def test_empty_episode_rejected(self):
        with pytest.raises(ValueError):
            EpisodeSchedule(((0, 1), ()))

    def test_seen_through_accumulates_sorted(self):
        sched = EpisodeSchedule(((3, 1), (0, 2)))
        assert sched.seen_through(0) == [1, 3]
        assert sched.seen_through(1) == [0, 1, 2, 3]


class TestHabituation:
    def test_decay_closed_form(self):
        state = HabituationState.fresh(4, tau=0.3, gamma=0.5)
        for _ in range(5):
            habituation_decay(state, np.array([1, 2]))
        np.testing.assert_allclose(state.h, [1.0, 0.7**5, 0.7**5, 1.0], rtol=1e-12)

    def test_counters_floored_above_zero(self):
        state = HabituationState.fresh(1, tau=0.9, gamma=1.0)
        for _ in range(2000):
            habituation_decay(state, np.array([0]))
        assert state.h[0] > 0.0

    def test_select_most_active(self):
        np.testing.assert_array_equal(
            select_habituated(np.array([0.1, 0.9, 0.5]), 0.34), [1]
        )

    def test_select_floor_boundary(self):
        acts = np.array([0.1, 0.9, 0.5])
        assert len(select_habituated(acts, 0.3)) == 0  # floor(0.9) = 0
        np.testing.assert_array_equal(select_habituated(acts, 0.67), [1, 2])
        np.testing.assert_array_equal(select_habituated(acts, 1.0), [0, 1, 2])

    def test_select_tie_goes_to_lower_index(self):
        np.testing.assert_array_equal(
            select_habituated(np.array([0.5, 0.5, 0.1]), 0.34), [0]
        )

    def test_validation(self):
        with pytest.raises(ValueError):
            HabituationState.fresh(4, tau=1.0, gamma=0.5)
        with pytest.raises(ValueError):
            HabituationState.fresh(4, tau=0.5, gamma=0.0)
        with pytest.raises(ValueError):
            HabituationState(np.array([0.0, 1.0]), tau=0.1, gamma=0.5)
        with pytest.raises(ValueError):
            select_habituated(np.ones(3), 0.0)


class TestScaleUnitGradients:
    def test_elementwise_oracle(self):
        rng = np.random.default_rng(0)
        w = Parameter(rng.normal(size=(5, 3)))
        b = Parameter(rng.normal(size=3))
        w.grad = rng.normal(size=(5, 3))
        b.grad = rng.normal(size=3)
        h = np.array([0.25, 1.0, 0.5])
        gw, gb = w.grad.copy(), b.grad.copy()
        scale_unit_gradients(h, w, b)
        np.testing.assert_array_equal(w.grad, gw * h)
        np.testing.assert_array_equal(b.grad, gb * h)

    def test_rested_units_bit_identical(self):
        rng = np.random.default_rng(1)
        w = Parameter(rng.normal(size=(4, 4)))
        w.grad = rng.normal(size=(4, 4))
        before = w.grad.copy()
        scale_unit_gradients(np.ones(4), w)
        np.testing.assert_array_equal(w.grad, before)

    def test_bias_none_untouched(self):
        rng = np.random.default_rng(2)
        w = Parameter(rng.normal(size=(4, 2)))
        b = Parameter(rng.normal(size=2))
        w.grad = rng.normal(size=(4, 2))
        b.grad = rng.normal(size=2)
        gb = b.grad.copy()
        scale_unit_gradients(np.array([0.5, 0.5]), w)
        np.testing.assert_array_equal(b.grad, gb)


class TestSynapticImportance:
    def test_hand_worked_consolidation(self):
        """One credited step: omega 0.2, drift 0.1, xi 0.01 -> importance 10."""
        p = Parameter(np.array([0.0]))
        si = SIState(c=1.0, xi=0.01)
        old = {p.id: p.value.copy()}
        p.grad[:] = -2.0
        p.value[:] = 0.1
        si_accumulate(si, [p], old)
        np.testing.assert_allclose(si.omega[p.id], [0.2])
        si_consolidate(si, [p])
        np.testing.assert_allclose(si.big_omega[p.id], [10.0])
        assert si.n_consolidations == 1
        np.testing.assert_array_equal(si.theta_ref[p.id], [0.1])
        np.testing.assert_array_equal(si.omega[p.id], [0.0])

    def test_penalty_zero_at_anchor(self):
        p = Parameter(np.array([0.1]))
        si = SIState(c=2.0, xi=0.01)
        si.big_omega[p.id] = np.array([10.0])
        si.theta_ref[p.id] = np.array([0.1])
        si.n_consolidations = 1
        tape = Tape()
        pen = si_penalty(tape, si, [p])
        assert pen.data.item() == 0.0
        p.grad[:] = 0.0
        backward(pen)
        np.testing.assert_array_equal(p.grad, [0.0])

    def test_penalty_value_and_gradient(self):
        """c * omega * d^2 with gradient 2 * c * omega * d."""
        p = Parameter(np.array([0.15]))
        si = SIState(c=2.0, xi=0.01)
        si.big_omega[p.id] = np.array([10.0])
        si.theta_ref[p.id] = np.array([0.1])
        si.n_consolidations = 1
        tape = Tape()
        pen = si_penalty(tape, si, [p])
        np.testing.assert_allclose(pen.data, 2.0 * 10.0 * 0.05**2, rtol=1e-12)
        p.grad[:] = 0.0
        backward(pen)
        np.testing.assert_allclose(p.grad, [2.0 * 2.0 * 10.0 * 0.05], rtol=1e-12)

    def test_negative_path_credit_clipped(self):
        p = Parameter(np.array([0.0]))
        si = SIState(c=1.0)
        old = {p.id: p.value.copy()}
        p.grad[:] = 2.0  # gradient and step in the same direction: negative credit
        p.value[:] = 0.1
        si_accumulate(si, [p], old)
        assert si.omega[p.id][0] < 0
        si_consolidate(si, [p])
        np.testing.assert_array_equal(si.big_omega[p.id], [0.0])

    def test_path_integral_tracks_loss_drop(self):
        """SGD on a 1-d quadratic: summed credit approximates the loss decrease."""
        p = Parameter(np.array([0.0]))
        si = SIState(c=1.0)
        target = np.ones(1)
        first = None
        for _ in range(300):
            p.grad[:] = 0.0
            tape = Tape()
            loss = mse(tape.leaf(p), target)
            if first is None:
                first = loss.data.item()
            backward(loss)
            old = {p.id: p.value.copy()}
            sgd_step([p], lr=0.01)
            si_accumulate(si, [p], old)
        final = mse(Tape().leaf(p), target).data.item()
        drop = first - final
        credit = si.omega[p.id].sum()
        assert abs(credit - drop) / drop < 0.1

    def test_penalty_structurally_off(self):
        p = Parameter(np.array([1.0]))
        tape = Tape()
        assert si_penalty(tape, SIState(c=0.0), [p]) is None
        fresh = SIState(c=5.0)
        assert si_penalty(tape, fresh, [p]) is None  # nothing consolidated yet

    def test_validation(self):
        with pytest.raises(ValueError):
            SIState(c=-1.0)
        with pytest.raises(ValueError):
            SIState(c=1.0, xi=0.0)


class TestGaussianKl:
    def test_zero_at_standard_normal(self):
        assert gaussian_kl(np.zeros((3, 4)), np.zeros((3, 4))).tolist() == [0.0] * 3

    def test_pinned_value(self):
        kl = gaussian_kl(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]))
        np.testing.assert_allclose(kl, [0.5], rtol=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        mu = rng.normal(size=(50, 6))
        logvar = rng.normal(size=(50, 6))
        assert (gaussian_kl(mu, logvar) >= 0).all()


class TestReplay:
    def test_soft_labels_normalized_over_seen(self):
        rng = np.random.default_rng(4)
        model = ReplayVAE(rng, n_classes=6, feature_dim=8, hidden_dim=12, latent_dim=4)
        model.trained_episodes = 1
        feats, soft = generate_replay(model, [1, 4], 16, rng)
        assert feats.shape == (16, 8)
        assert soft.shape == (16, 6)
        np.testing.assert_allclose(soft[:, [1, 4]].sum(axis=1), np.ones(16), atol=1e-9)
        np.testing.assert_array_equal(soft[:, [0, 2, 3, 5]], np.zeros((16, 4)))

    def test_untrained_model_rejected(self):
        rng = np.random.default_rng(5)
        model = ReplayVAE(rng, n_classes=4, feature_dim=8, hidden_dim=12, latent_dim=4)
        with pytest.raises(NoTrainedModel):
            generate_replay(model, [0], 4, rng)

    def test_foreign_class_in_slice_rejected(self):
        rng = np.random.default_rng(6)
        train, _ = _blob_tables(rng)
        model = ReplayVAE(rng, n_classes=4, feature_dim=8, hidden_dim=12, latent_dim=4)
        with pytest.raises(ForeignClassInSlice):
            train_episode(
                model,
                train.select_classes([0, 1]),
                [0],
                [],
                method=PRESETS["none"],
                opt=AdamState(lr=1e-3),
                hab=None,
                si=None,
                rng=rng,
                steps=1,
            )


class TestReductionIdentities:
    def _run(self, method, si, hab, seed=0):
        rng = np.random.default_rng(seed)
        train, test = _blob_tables(rng)
        model = ReplayVAE(
            np.random.default_rng(seed + 1), 4, feature_dim=8, hidden_dim=12, latent_dim=4
        )
        opt = AdamState(lr=3e-3)
        loop_rng = np.random.default_rng(seed + 2)
        train_episode(
            model, train.select_classes([0, 1]), [0, 1], [],
            method=method, opt=opt, hab=hab, si=si, rng=loop_rng, steps=40,
        )
        train_episode(
            model, train.select_classes([2, 3]), [2, 3], [0, 1],
            method=method, opt=opt, hab=hab, si=si, rng=loop_rng, steps=40,
        )
        return [p.value.copy() for p in model.params()]

    def test_tau_zero_habituation_is_identity(self):
        base = self._run(PRESETS["bir"], si=None, hab=None)
        method = MethodConfig("h0", replay=True, habituation=True, tau=0.0, gamma=0.5)
        hab = HabituationState.fresh(12, tau=0.0, gamma=0.5)
        with_h = self._run(method, si=None, hab=hab)
        for a, b in zip(base, with_h):
            np.testing.assert_array_equal(a, b)

    def test_c_zero_si_is_identity(self):
        base = self._run(PRESETS["bir"], si=None, hab=None)
        with_si = self._run(PRESETS["bir"], si=SIState(c=0.0), hab=None)
        for a, b in zip(base, with_si):
            np.testing.assert_array_equal(a, b)


class TestRunCil:
    def test_smoke_shapes_and_determinism(self):
        rng = np.random.default_rng(7)
        train, test = _blob_tables(rng)
        sched = EpisodeSchedule(((0, 1), (2, 3)))

        def go():
            return run_cil(
                train, test, sched, PRESETS["bir"],
                seed=0, steps_per_episode=40, hidden_dim=12, latent_dim=4,
            )

        res = go()
        assert len(res.overall) == 2
        assert [len(row) for row in res.per_episode] == [1, 2]
        assert all(0.0 <= v <= 1.0 for v in res.overall)
        assert res.final_overall == res.overall[-1]
        again = go()
        assert res.overall == again.overall
        assert res.per_episode == again.per_episode

    def test_first_episode_learned(self):
        rng = np.random.default_rng(8)
        train, test = _blob_tables(rng)
        sched = EpisodeSchedule(((0, 1), (2, 3)))
        res = run_cil(
            train, test, sched, PRESETS["none"],
            seed=0, steps_per_episode=150, hidden_dim=16, latent_dim=4,
        )
        assert res.per_episode[0][0] >= 0.9

    def test_missing_class_rejected(self):
        rng = np.random.default_rng(9)
        train, test = _blob_tables(rng)
        with pytest.raises(ScheduleClassMissing):
            run_cil(train, test, EpisodeSchedule(((0, 9),)), PRESETS["none"])

    def test_evaluate_empty_table_rejected(self):
        rng = np.random.default_rng(10)
        model = ReplayVAE(rng, 4, feature_dim=8, hidden_dim=12, latent_dim=4)
        empty = FeatureTable(np.zeros((0, 8)), np.zeros(0, dtype=np.int64))
        with pytest.raises(ValueError):
            evaluate(model, empty, [0, 1])
