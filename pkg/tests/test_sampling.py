"""Tests for trajectory sampling, stochastic runs, and exact expectations."""

import itertools

import numpy as np
import pytest

from conftest import make_setup, singular_setup

import tdhorizon.sampling as sampling_module
from tdhorizon import (
    DEFAULT_SCHEDULE,
    ConfigurationError,
    EnumerationLimitError,
    PathEnumerator,
    StepSizeSchedule,
    TrajectorySample,
    expected_update,
    fixed_point,
    load_problem,
    make_rng,
    ngtd_step,
    ntd_step,
    ode_direction,
    run_stochastic,
    sample_trajectory,
    weighted_gram,
)
from tdhorizon.sampling import RNG_LABEL, _pick, _pick_rows


def twostate_setup():
    return load_problem("twostate").setup


class TestMakeRng:
    def test_same_seed_same_stream(self):
        a = make_rng(42).random(16)
        b = make_rng(42).random(16)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        assert make_rng(0).random() != make_rng(1).random()

    def test_rejects_bad_seeds(self):
        for bad in (-1, 1.5, True, "7", None):
            with pytest.raises(ConfigurationError):
                make_rng(bad)

    def test_label(self):
        assert RNG_LABEL == "numpy-philox4x64-10"


class TestStreamContract:
    """The chunked sampler relies on block draws consuming the generator
    stream exactly as repeated scalar draws would."""

    def test_block_draw_matches_scalar_draws(self):
        block = make_rng(123).random((4, 7))
        rng = make_rng(123)
        flat = np.array([rng.random() for _ in range(28)])
        np.testing.assert_array_equal(block, flat.reshape(4, 7))

    def test_split_draws_match_one_draw(self):
        one = make_rng(9).random(30)
        rng = make_rng(9)
        parts = np.concatenate([rng.random(11), rng.random(11), rng.random(8)])
        np.testing.assert_array_equal(one, parts)


class TestStepSizeSchedule:
    def test_values(self):
        sched = StepSizeSchedule(0.5, 2.0, 0.75)
        for i in (0, 1, 10, 999):
            assert sched.alpha(i) == 0.5 / (2.0 + i) ** 0.75

    def test_alphas_matches_scalar_calls(self):
        sched = StepSizeSchedule(1.0, 3.0, 0.6)
        np.testing.assert_array_equal(
            sched.alphas(50), np.array([sched.alpha(i) for i in range(50)])
        )

    def test_default(self):
        assert DEFAULT_SCHEDULE == StepSizeSchedule(0.5, 1000.0, 1.0)

    def test_label_round_trips_parameters(self):
        assert StepSizeSchedule(0.5, 1.0, 0.51).label() == "rm(a=0.5,b=1.0,c=0.51)"

    def test_validation(self):
        for a, b, c in [(0.0, 1.0, 1.0), (-1.0, 1.0, 1.0), (1.0, 0.0, 1.0),
                        (1.0, -2.0, 1.0), (1.0, 1.0, 0.5), (1.0, 1.0, 0.2),
                        (1.0, 1.0, 1.2)]:
            with pytest.raises(ConfigurationError):
                StepSizeSchedule(a, b, c)


class TestCategoricalDraws:
    def test_pick_rows_matches_pick(self):
        rng = np.random.default_rng(5)
        probs = rng.random((40, 6)) + 0.01
        u = rng.random(40)
        rows = _pick_rows(probs, u)
        for i in range(40):
            assert rows[i] == _pick(probs[i], u[i])

    def test_never_selects_zero_probability(self):
        probs = np.array([0.0, 0.3, 0.0, 0.7])
        for u in np.linspace(0.0, 0.999999, 101):
            assert _pick(probs, u) in (1, 3)

    def test_frequencies_match_probabilities(self):
        probs = np.array([0.2, 0.5, 0.3])
        rng = make_rng(11)
        draws = _pick_rows(np.broadcast_to(probs, (4000, 3)), rng.random(4000))
        freq = np.bincount(draws, minlength=3) / 4000
        np.testing.assert_allclose(freq, probs, atol=0.05)


class TestSampleTrajectory:
    def test_shapes_and_horizon(self):
        setup = make_setup(7)
        sample = sample_trajectory(setup, 3, make_rng(0))
        assert sample.states.shape == (4,)
        assert sample.actions.shape == (3,)
        assert sample.rewards.shape == (3,)
        assert sample.horizon == 3

    def test_consumes_exactly_one_plus_two_n_uniforms(self):
        setup = make_setup(7)
        for n in (1, 2, 5):
            reference = make_rng(77).random(1 + 2 * n + 4)
            rng = make_rng(77)
            sample_trajectory(setup, n, rng)
            np.testing.assert_array_equal(rng.random(4), reference[1 + 2 * n :])

    def test_paths_are_feasible(self):
        setup = make_setup(13)
        beta = setup.behavior_policy.probs
        transition = setup.base_mdp.transition
        reward = setup.base_mdp.reward
        rng = make_rng(1)
        for _ in range(50):
            sample = sample_trajectory(setup, 4, rng)
            for k in range(4):
                s, a, nxt = sample.states[k], sample.actions[k], sample.states[k + 1]
                assert beta[s, a] > 0.0
                assert transition[s, a, nxt] > 0.0
                assert sample.rewards[k] == reward[s, a, nxt]

    def test_rho_is_the_likelihood_ratio_product(self):
        setup = make_setup(17)
        pi = setup.target_policy.probs
        beta = setup.behavior_policy.probs
        rng = make_rng(2)
        for _ in range(30):
            sample = sample_trajectory(setup, 3, rng)
            expected = 1.0
            for k in range(3):
                s, a = sample.states[k], sample.actions[k]
                expected = expected * (pi[s, a] / beta[s, a])
            assert sample.rho == pytest.approx(expected, rel=1e-12)

    def test_twostate_rho_values(self):
        setup = twostate_setup()
        rng = make_rng(3)
        rhos = {sample_trajectory(setup, 3, rng).rho for _ in range(200)}
        assert rhos == {0.0, 8.0}

    def test_start_state_frequencies_match_d_beta(self):
        setup = twostate_setup()
        rng = make_rng(4)
        starts = [sample_trajectory(setup, 1, rng).states[0] for _ in range(2000)]
        freq = np.bincount(starts, minlength=2) / 2000
        np.testing.assert_allclose(freq, setup.d_beta, atol=0.05)

    def test_rejects_bad_n(self):
        setup = make_setup(7)
        for bad in (0, -1, 1.5, True):
            with pytest.raises(ConfigurationError):
                sample_trajectory(setup, bad, make_rng(0))


class TestTrajectorySample:
    def test_rejects_inconsistent_lengths(self):
        with pytest.raises(ConfigurationError):
            TrajectorySample(states=[0, 1], actions=[0, 1], rewards=[0.0, 0.0], rho=1.0)
        with pytest.raises(ConfigurationError):
            TrajectorySample(states=[0, 1], actions=[0], rewards=[0.0, 0.0], rho=1.0)


class TestSingleSteps:
    """Hand-worked updates on the twostate problem.

    Trajectory s0 -> (action 1) -> s1 has rho = pi/beta = 2, phi(s0) = 1,
    phi(s1) = 2, zero reward, gamma = 0.99.
    """

    def sample(self):
        return TrajectorySample(states=[0, 1], actions=[1], rewards=[0.0], rho=2.0)

    def test_ntd_worked_example(self):
        setup = twostate_setup()
        theta = np.array([1.0])
        # G = 0.99 * 2 * 1 = 1.98; delta = 1.98 - 1 = 0.98; increment = alpha*2*0.98*1
        for alpha in (0.1, 0.05):
            new = ntd_step(setup, theta, alpha, self.sample())
            np.testing.assert_allclose(new, [1.0 + alpha * 2.0 * 0.98], rtol=1e-15)

    def test_ngtd_worked_example(self):
        setup = twostate_setup()
        theta = np.array([1.0])
        lam = np.array([1.0])
        new_theta, new_lam = ngtd_step(setup, theta, lam, 0.1, self.sample())
        # theta' = 1 + 0.1*2*1*(1 - 0.99*2) = 0.804
        # lam'   = 1 + 0.1*2*(1.98 - 1 - 1)*1 = 0.996
        np.testing.assert_allclose(new_theta, [0.804], rtol=1e-12)
        np.testing.assert_allclose(new_lam, [0.996], rtol=1e-12)

    def test_zero_rho_leaves_parameters_unchanged(self):
        setup = twostate_setup()
        dead = TrajectorySample(states=[0, 0], actions=[0], rewards=[0.0], rho=0.0)
        theta = np.array([0.7])
        lam = np.array([-0.3])
        np.testing.assert_array_equal(ntd_step(setup, theta, 0.5, dead), theta)
        new_theta, new_lam = ngtd_step(setup, theta, lam, 0.5, dead)
        np.testing.assert_array_equal(new_theta, theta)
        np.testing.assert_array_equal(new_lam, lam)


class TestRunStochastic:
    def test_matches_scalar_composition_ntd(self):
        setup = make_setup(11)
        n, iters, seed, log_every = 2, 230, 5, 50
        sched = StepSizeSchedule(0.3, 10.0, 0.8)
        trace = run_stochastic(
            setup, n, "ntd", schedule=sched, iters=iters, seed=seed, log_every=log_every
        )
        assert not trace.diverged

        rng = make_rng(seed)
        theta = np.zeros(setup.num_features)
        manual = {0: theta.copy()}
        for i in range(iters):
            sample = sample_trajectory(setup, n, rng)
            if sample.rho != 0.0:
                theta = ntd_step(setup, theta, sched.alpha(i), sample)
            if (i + 1) % log_every == 0 or i + 1 == iters:
                manual[i + 1] = np.array(theta, copy=True)

        assert list(trace.logged_iters) == sorted(manual)
        for row, it in zip(trace.thetas, trace.logged_iters):
            np.testing.assert_array_equal(row, manual[int(it)])

    def test_matches_scalar_composition_ngtd(self):
        setup = make_setup(23)
        n, iters, seed, log_every = 1, 150, 9, 40
        trace = run_stochastic(
            setup, n, "ngtd", schedule=0.05, iters=iters, seed=seed, log_every=log_every
        )
        assert not trace.diverged

        rng = make_rng(seed)
        theta = np.zeros(setup.num_features)
        lam = np.zeros(setup.num_features)
        manual = {0: (theta.copy(), lam.copy())}
        for i in range(iters):
            sample = sample_trajectory(setup, n, rng)
            if sample.rho != 0.0:
                theta, lam = ngtd_step(setup, theta, lam, 0.05, sample)
            if (i + 1) % log_every == 0 or i + 1 == iters:
                manual[i + 1] = (np.array(theta, copy=True), np.array(lam, copy=True))

        assert list(trace.logged_iters) == sorted(manual)
        for theta_row, lam_row, it in zip(trace.thetas, trace.lambdas, trace.logged_iters):
            np.testing.assert_array_equal(theta_row, manual[int(it)][0])
            np.testing.assert_array_equal(lam_row, manual[int(it)][1])

    def test_chunk_size_does_not_change_results(self, monkeypatch):
        setup = make_setup(21)
        base = run_stochastic(setup, 1, "ngtd", iters=40, seed=3, log_every=7)
        monkeypatch.setattr(sampling_module, "CHUNK_SIZE", 7)
        small = run_stochastic(setup, 1, "ngtd", iters=40, seed=3, log_every=7)
        np.testing.assert_array_equal(base.logged_iters, small.logged_iters)
        np.testing.assert_array_equal(base.thetas, small.thetas)
        np.testing.assert_array_equal(base.lambdas, small.lambdas)

    def test_logged_iterations_structure(self):
        setup = make_setup(7)
        trace = run_stochastic(setup, 1, "ntd", schedule=0.01, iters=10, log_every=4)
        assert list(trace.logged_iters) == [0, 4, 8, 10]
        assert trace.iterations == 10
        assert trace.thetas.shape == (4, setup.num_features)
        assert trace.lambdas is None
        assert trace.rng_label == RNG_LABEL
        assert trace.schedule_label == "constant(0.01)"

    def test_final_iteration_logged_once(self):
        setup = make_setup(7)
        trace = run_stochastic(setup, 1, "ntd", schedule=0.01, iters=12, log_every=4)
        assert list(trace.logged_iters) == [0, 4, 8, 12]

    def test_twostate_one_step_diverges(self):
        setup = twostate_setup()
        trace = run_stochastic(
            setup,
            1,
            "ntd",
            schedule=StepSizeSchedule(0.5, 1.0, 0.51),
            iters=20_000,
            seed=0,
            theta0=[1.0],
        )
        assert trace.diverged
        assert trace.iterations < 20_000
        assert trace.logged_iters[-1] == trace.iterations
        final = float(np.abs(trace.final_theta[0]))
        assert not np.isfinite(final) or final > 1e9

    def test_distance_is_nan_when_fixed_point_is_singular(self):
        setup = singular_setup()
        trace = run_stochastic(setup, 1, "ntd", schedule=0.01, iters=5, log_every=1)
        assert np.isnan(trace.dist_to_fixed_point).all()

    def test_distance_tracks_fixed_point(self):
        setup = twostate_setup()
        trace = run_stochastic(setup, 19, "ntd", schedule=0.01, iters=20, theta0=[0.5])
        star = fixed_point(setup, 19)
        expected = np.linalg.norm(trace.thetas[0] - star)
        assert trace.dist_to_fixed_point[0] == pytest.approx(expected)

    def test_validation(self):
        setup = make_setup(7)
        with pytest.raises(ConfigurationError):
            run_stochastic(setup, 1, "sarsa")
        with pytest.raises(ConfigurationError):
            run_stochastic(setup, 1, "ntd", iters=0)
        with pytest.raises(ConfigurationError):
            run_stochastic(setup, 1, "ntd", iters=True)
        with pytest.raises(ConfigurationError):
            run_stochastic(setup, 1, "ntd", log_every=0)
        with pytest.raises(ConfigurationError):
            run_stochastic(setup, 1, "ntd", schedule=-0.5)
        with pytest.raises(ConfigurationError):
            run_stochastic(setup, 1, "ntd", schedule=True)
        with pytest.raises(ConfigurationError):
            run_stochastic(setup, 1, "ntd", theta0=np.zeros(setup.num_features + 1))
        with pytest.raises(ConfigurationError):
            run_stochastic(setup, 1, "ngtd", lambda0=np.zeros(setup.num_features + 1))

    def test_algorithm_names_normalize(self):
        setup = make_setup(7)
        trace = run_stochastic(setup, 1, "N-TD", schedule=0.01, iters=3)
        assert trace.algorithm == "ntd"


def brute_force_stats(setup, n_max):
    """Reference statistics by explicit iteration over every path."""
    num_states = setup.num_states
    num_actions = setup.base_mdp.num_actions
    phi = setup.features.phi
    beta = setup.behavior_policy.probs
    pi = setup.target_policy.probs
    transition = setup.base_mdp.transition
    reward = setup.base_mdp.reward
    m = setup.num_features
    return_stat = [np.zeros(m) for _ in range(n_max + 1)]
    cross_stat = [np.zeros((m, m)) for _ in range(n_max + 1)]
    for s0 in range(num_states):
        for k in range(n_max + 1):
            for path in itertools.product(range(num_actions), range(num_states), repeat=k):
                prob = float(setup.d_beta[s0])
                rho = 1.0
                ret = 0.0
                s = s0
                for j in range(k):
                    a, nxt = path[2 * j], path[2 * j + 1]
                    step = beta[s, a] * transition[s, a, nxt]
                    if step == 0.0:
                        prob = 0.0
                        break
                    prob *= step
                    rho *= pi[s, a] / beta[s, a]
                    ret += setup.gamma**j * reward[s, a, nxt]
                    s = nxt
                if prob == 0.0:
                    continue
                return_stat[k] += prob * rho * ret * phi[s0]
                cross_stat[k] += prob * rho * np.outer(phi[s0], phi[s])
    return return_stat, cross_stat


class TestPathEnumerator:
    def test_matches_brute_force_on_twostate(self):
        setup = twostate_setup()
        enum = PathEnumerator(setup, 3)
        ref_return, ref_cross = brute_force_stats(setup, 3)
        for k in range(4):
            np.testing.assert_allclose(enum.return_stat[k], ref_return[k], atol=1e-13)
            np.testing.assert_allclose(enum.cross_stat[k], ref_cross[k], atol=1e-13)

    def test_matches_brute_force_on_random_problems(self):
        for seed in (0, 1, 2):
            setup = make_setup(seed, num_states=3, num_actions=2, num_features=2)
            enum = PathEnumerator(setup, 3)
            ref_return, ref_cross = brute_force_stats(setup, 3)
            for k in range(4):
                np.testing.assert_allclose(
                    enum.return_stat[k], ref_return[k], atol=1e-12
                )
                np.testing.assert_allclose(enum.cross_stat[k], ref_cross[k], atol=1e-12)

    def test_depth_zero_cross_stat_is_the_weighted_gram(self):
        setup = make_setup(5)
        enum = PathEnumerator(setup, 1)
        np.testing.assert_allclose(enum.cross_stat[0], weighted_gram(setup), atol=1e-14)
        np.testing.assert_allclose(enum.return_stat[0], 0.0, atol=0.0)

    def test_expected_update_matches_ode_direction(self):
        rng = np.random.default_rng(100)
        for seed in (0, 1, 2, 3):
            setup = make_setup(seed, num_states=3, num_actions=2)
            enum = PathEnumerator(setup, 4)
            for n in (1, 2, 4):
                for _ in range(5):
                    theta = rng.standard_normal(setup.num_features)
                    lam = rng.standard_normal(setup.num_features)
                    np.testing.assert_allclose(
                        enum.expected_update(n, "ntd", theta),
                        ode_direction(setup, n, "ntd", theta),
                        atol=1e-12,
                    )
                    got_t, got_l = enum.expected_update(n, "ngtd", theta, lam)
                    want_t, want_l = ode_direction(setup, n, "ngtd", theta, lam)
                    np.testing.assert_allclose(got_t, want_t, atol=1e-12)
                    np.testing.assert_allclose(got_l, want_l, atol=1e-12)

    def test_saddle_point_has_zero_drift(self):
        setup = make_setup(19, num_states=3, num_actions=2)
        star = fixed_point(setup, 2)
        d_theta, d_lam = expected_update(setup, 2, "ngtd", star, np.zeros_like(star))
        np.testing.assert_allclose(d_theta, 0.0, atol=1e-12)
        np.testing.assert_allclose(d_lam, 0.0, atol=1e-10)

    def test_rejects_depth_beyond_enumerated(self):
        setup = twostate_setup()
        enum = PathEnumerator(setup, 2)
        with pytest.raises(ConfigurationError, match="exceeds"):
            enum.expected_update(3, "ntd", np.zeros(1))

    def test_ntd_rejects_lam(self):
        setup = twostate_setup()
        with pytest.raises(ConfigurationError, match="lam"):
            expected_update(setup, 1, "ntd", np.zeros(1), np.zeros(1))

    def test_rejects_bad_theta_shape(self):
        setup = twostate_setup()
        with pytest.raises(ConfigurationError, match="shape"):
            expected_update(setup, 1, "ntd", np.zeros(3))

    def test_enumeration_limit_guard(self, monkeypatch):
        monkeypatch.setattr(sampling_module, "ENUMERATION_LIMIT", 3)
        with pytest.raises(EnumerationLimitError, match="limit"):
            PathEnumerator(twostate_setup(), 3)


class TestOdeDirection:
    def test_ntd_drift_is_zero_at_the_fixed_point(self):
        for seed in (3, 4):
            setup = make_setup(seed)
            star = fixed_point(setup, 2)
            np.testing.assert_allclose(
                ode_direction(setup, 2, "ntd", star), 0.0, atol=1e-10
            )

    def test_ngtd_rejects_mismatched_lam(self):
        setup = twostate_setup()
        with pytest.raises(ConfigurationError):
            expected_update(setup, 1, "ngtd", np.zeros(1), np.zeros(2))
