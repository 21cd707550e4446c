"""TD update step, reward shaping, schedules, and the per-seed runner."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdcurves.ensembles import build_powerlaw_ensemble, reduced_matrices
from tdcurves.errors import ConfigurationError
from tdcurves.gridworld import MarkovChainEnsemble
from tdcurves.simulator import (
    EtaSchedule,
    LearnerConfig,
    LearningCurve,
    eta_at,
    reshape_rewards,
    run_td,
    td_update_step,
    value_error,
)
from tdcurves.sources import Batch, PowerLawOU
from tdcurves.spectral import td_fixed_point
from tdcurves.theory import dmft_curve

small_floats = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


def random_batch(rng, b, t_len, n):
    return Batch(
        features=rng.standard_normal((b, t_len + 1, n)),
        rewards=rng.standard_normal((b, t_len + 1)),
    )


class TestUpdateStep:
    def test_zero_learning_rate_is_identity(self):
        rng = np.random.default_rng(0)
        batch = random_batch(rng, 3, 2, 4)
        w = rng.standard_normal(4)
        w2, deltas = td_update_step(w, batch, 0.0, 0.9)
        assert np.array_equal(w2, w)
        assert deltas.shape == (3, 2)

    def test_hand_worked_two_feature_episode(self):
        # one transition from a state with feature (1,0) to one with (0,1),
        # reward 1 on the transition, gamma=0.5, full step eta=1
        feats = np.array([[[1.0, 0.0], [0.0, 1.0]]])
        rewards = np.array([[1.0, 0.0]])
        batch = Batch(features=feats, rewards=rewards)
        w = np.zeros(2)
        w1, d1 = td_update_step(w, batch, 1.0, 0.5)
        assert d1[0, 0] == pytest.approx(1.0)
        assert np.allclose(w1, [1.0, 0.0])
        w2, d2 = td_update_step(w1, batch, 1.0, 0.5)
        assert d2[0, 0] == pytest.approx(1.0 + 0.5 * 0.0 - 1.0)
        assert np.allclose(w2, w1)

    def test_dimension_mismatch(self):
        batch = random_batch(np.random.default_rng(1), 2, 2, 3)
        with pytest.raises(ValueError):
            td_update_step(np.zeros(5), batch, 0.1, 0.9)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(min_value=-4.0, max_value=4.0).filter(lambda c: abs(c) > 1e-3),
           st.integers(min_value=0, max_value=2**31))
    def test_scaling_linearity(self, c, seed):
        rng = np.random.default_rng(seed)
        batch = random_batch(rng, 2, 3, 3)
        w = rng.standard_normal(3)
        base, _ = td_update_step(w, batch, 0.3, 0.8)
        scaled, _ = td_update_step(c * w, batch._replace(rewards=c * batch.rewards), 0.3, 0.8)
        assert np.max(np.abs(scaled - c * base)) < 1e-9 * max(1.0, abs(c))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**31))
    def test_batch_decomposition(self, b, seed):
        rng = np.random.default_rng(seed)
        batch = random_batch(rng, b, 2, 3)
        w = rng.standard_normal(3)
        full, _ = td_update_step(w, batch, 0.2, 0.9)
        increments = []
        for mu in range(b):
            single = Batch(features=batch.features[mu : mu + 1],
                           rewards=batch.rewards[mu : mu + 1])
            w_mu, _ = td_update_step(w, single, 0.2, 0.9)
            increments.append(w_mu - w)
        recomposed = w + np.mean(increments, axis=0)
        assert np.max(np.abs(full - recomposed)) < 1e-12


class TestReshapeRewards:
    def test_zero_potential_is_identity(self):
        rng = np.random.default_rng(2)
        feats = rng.standard_normal((4, 3))
        rewards = rng.standard_normal(4)
        out = reshape_rewards(rewards, feats, np.zeros(3), 0.9)
        assert np.array_equal(out, rewards)

    def test_branch_formulas(self):
        # phi values (1, 2, 3) via identity features, zero rewards, gamma 1/2
        feats = np.eye(3)
        w_phi = np.array([1.0, 2.0, 3.0])
        out = reshape_rewards(np.zeros(3), feats, w_phi, 0.5)
        assert out[0] == pytest.approx(-1.0)
        assert out[1] == pytest.approx(0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=1, max_value=5), st.floats(min_value=0.0, max_value=0.99),
           st.integers(min_value=0, max_value=2**31))
    def test_telescoping(self, t_len, gamma, seed):
        rng = np.random.default_rng(seed)
        feats = rng.standard_normal((t_len + 1, 3))
        rewards = rng.standard_normal(t_len + 1)
        w_phi = rng.standard_normal(3)
        out = reshape_rewards(rewards, feats, w_phi, gamma)
        powers = gamma ** np.arange(t_len)
        lhs = powers @ out[:t_len] - powers @ rewards[:t_len]
        rhs = -(gamma**t_len) * (feats[t_len] @ w_phi)
        assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_batched_matches_per_episode(self):
        rng = np.random.default_rng(3)
        feats = rng.standard_normal((4, 3, 2))
        rewards = rng.standard_normal((4, 3))
        w_phi = rng.standard_normal(2)
        batched = reshape_rewards(rewards, feats, w_phi, 0.7)
        for mu in range(4):
            single = reshape_rewards(rewards[mu], feats[mu], w_phi, 0.7)
            assert np.allclose(batched[mu], single)


class TestSchedule:
    def test_constant(self):
        sched = EtaSchedule(eta0=0.3)
        assert all(eta_at(sched, n) == 0.3 for n in (1, 5, 1000))

    def test_power_law_values(self):
        assert eta_at(EtaSchedule(eta0=0.1, chi=1.0), 10) == pytest.approx(0.01)
        assert eta_at(EtaSchedule(eta0=0.1, chi=0.2), 32) == pytest.approx(0.05)

    def test_zero_iteration_rejected(self):
        with pytest.raises(ConfigurationError):
            eta_at(EtaSchedule(eta0=0.1), 0)

    def test_invalid_parameters(self):
        with pytest.raises(ConfigurationError):
            EtaSchedule(eta0=0.0)
        with pytest.raises(ConfigurationError):
            EtaSchedule(eta0=0.1, chi=-0.5)

    def test_non_increasing(self):
        sched = EtaSchedule(eta0=2.0, chi=0.7)
        vals = [eta_at(sched, n) for n in range(1, 50)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestValueError:
    def setup_method(self):
        self.ens, self.w_r = build_powerlaw_ensemble(3, 2, 1.2, 1.1)
        self.red = reduced_matrices(self.ens, 0.5)
        self.w_td = td_fixed_point(self.red, self.w_r)

    def test_zero_at_fixed_point(self):
        assert value_error(self.w_td, self.red, self.w_td) == 0.0

    def test_scalar_quadratic(self):
        ens, _ = build_powerlaw_ensemble(1, 1, 1.2, 1.1)
        red = reduced_matrices(ens, 0.0)
        assert value_error(np.array([0.5]), red, np.array([0.0])) == pytest.approx(0.25)

    def test_irreducible_noise_floor(self):
        out = value_error(self.w_td, self.red, self.w_td, action_noise=0.1)
        assert out == pytest.approx(0.1)


class _FixedEpisodeSource:
    """Deterministic source: the only possible episode of a 2-state chain."""

    def __init__(self, feats, rewards):
        self.n_features = feats.shape[1]
        self.n_transitions = feats.shape[0] - 1
        self._feats = feats
        self._rewards = rewards

    def sample(self, rng, batch_size):
        return Batch(
            features=np.tile(self._feats, (batch_size, 1, 1)),
            rewards=np.tile(self._rewards, (batch_size, 1)),
        )


class TestRunTd:
    def test_deterministic_chain_converges_to_projection(self):
        # state 1 -> state 2 -> state 2 with reward 1 at the first step and
        # gamma = 1/2 has V = (1, 0); identity features must recover it
        feats = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        rewards = np.array([1.0, 0.0, 0.0])
        src = _FixedEpisodeSource(feats, rewards)
        pi = np.array([[0.0, 1.0], [0.0, 1.0]])
        ens = MarkovChainEnsemble(pi, np.eye(2), np.array([1.0, 0.0]), 2)
        red = reduced_matrices(ens, 0.5)
        w_td = td_fixed_point(red, rewards[:2])
        cfg = LearnerConfig(gamma=0.5, batch_size=1, n_steps=400,
                            schedule=EtaSchedule(eta0=0.5))
        res = run_td(cfg, src, [0], red, w_td)
        assert np.max(np.abs(res.final_weights[0] - [1.0, 0.0])) < 1e-6
        assert res.curve.per_seed[0, -1] < 1e-10

    def test_bitwise_deterministic(self):
        ens, w_r = build_powerlaw_ensemble(5, 4, 1.2, 1.1)
        red = reduced_matrices(ens, 0.9)
        w_td = td_fixed_point(red, w_r)
        src = PowerLawOU(5, 4, 1.2, 1.1)
        cfg = LearnerConfig(gamma=0.9, batch_size=3, n_steps=30,
                            schedule=EtaSchedule(eta0=0.2))
        r1 = run_td(cfg, src, [42, 43], red, w_td)
        r2 = run_td(cfg, src, [42, 43], red, w_td)
        assert np.array_equal(r1.curve.per_seed, r2.curve.per_seed)
        assert np.array_equal(r1.final_weights, r2.final_weights)

    def test_divergence_flagged_not_raised(self):
        ens, w_r = build_powerlaw_ensemble(4, 3, 1.2, 1.1)
        red = reduced_matrices(ens, 0.9)
        w_td = td_fixed_point(red, w_r)
        src = PowerLawOU(4, 3, 1.2, 1.1)
        cfg = LearnerConfig(gamma=0.9, batch_size=1, n_steps=200,
                            schedule=EtaSchedule(eta0=500.0))
        res = run_td(cfg, src, [0, 1], red, w_td)
        assert all(res.curve.diverged)
        assert np.isnan(res.curve.per_seed[:, -1]).all()

    def test_plateau_matches_theory(self):
        ens, w_r = build_powerlaw_ensemble(30, 10, 1.2, 1.1)
        red = reduced_matrices(ens, 0.9)
        w_td = td_fixed_point(red, w_r)
        cfg = LearnerConfig(gamma=0.9, batch_size=10, n_steps=600,
                            schedule=EtaSchedule(eta0=0.5))
        sim = run_td(cfg, PowerLawOU(30, 10, 1.2, 1.1), list(range(8)), red, w_td)
        theory, _ = dmft_curve(ens, w_r, cfg)
        sim_tail = sim.curve.mean[-100:].mean()
        th_tail = theory.per_seed[0, -100:].mean()
        assert abs(np.log(sim_tail) - np.log(th_tail)) < 0.25

    def test_shaping_changes_rewards_not_states(self):
        ens, w_r = build_powerlaw_ensemble(4, 3, 1.2, 1.1)
        red = reduced_matrices(ens, 0.9)
        w_td = td_fixed_point(red, w_r)
        src = PowerLawOU(4, 3, 1.2, 1.1)
        base = LearnerConfig(gamma=0.9, batch_size=2, n_steps=5,
                             schedule=EtaSchedule(eta0=1e-12))
        shaped = LearnerConfig(gamma=0.9, batch_size=2, n_steps=5,
                               schedule=EtaSchedule(eta0=1e-12),
                               shaping=np.array([1.0, -2.0, 0.5, 0.0]))
        # with a negligible learning rate the weight path stays at w0, so any
        # difference beyond O(eta) would mean shaping perturbed the episode stream
        r_base = run_td(base, src, [7], red, w_td)
        r_shaped = run_td(shaped, src, [7], red, w_td)
        assert np.max(np.abs(r_base.final_weights - r_shaped.final_weights)) < 1e-9
        rng1, rng2 = np.random.default_rng(7), np.random.default_rng(7)
        b1, b2 = src.sample(rng1, 4), src.sample(rng2, 4)
        reshaped = reshape_rewards(b2.rewards, b2.features, shaped.shaping, 0.9)
        assert np.array_equal(b1.features, b2.features)
        assert not np.allclose(reshaped, b2.rewards)

    def test_empty_seed_list_rejected(self):
        ens, w_r = build_powerlaw_ensemble(3, 2, 1.2, 1.1)
        red = reduced_matrices(ens, 0.9)
        cfg = LearnerConfig(gamma=0.9, batch_size=1, n_steps=5,
                            schedule=EtaSchedule(eta0=0.1))
        with pytest.raises(ConfigurationError):
            run_td(cfg, PowerLawOU(3, 2, 1.2, 1.1), [], red, np.zeros(3))


class TestLearningCurve:
    def test_aggregate_shapes_and_masking(self):
        per_seed = np.array([[1.0, 0.5, 0.25], [1.0, 0.6, np.nan]])
        curve = LearningCurve(variant="sim", seeds=[1, 2], per_seed=per_seed,
                              etas=np.array([0.0, 0.1, 0.1]), diverged=[False, True])
        assert curve.iterations.tolist() == [0, 1, 2]
        # diverged row is excluded from aggregates
        assert np.allclose(curve.mean, per_seed[0])
        assert np.allclose(curve.stderr, 0.0)

    def test_stderr_matches_direct_formula(self):
        rng = np.random.default_rng(5)
        per_seed = rng.uniform(0.1, 1.0, size=(6, 4))
        curve = LearningCurve(variant="sim", seeds=list(range(6)), per_seed=per_seed,
                              etas=np.zeros(4), diverged=[False] * 6)
        direct = per_seed.std(axis=0, ddof=1) / np.sqrt(6)
        assert np.allclose(curve.stderr, direct)
