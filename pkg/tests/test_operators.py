"""Projection, multi-step backup, horizons, fixed points, and bounds.

Derived quantities are checked against independent oracles: the projection
against a weighted least-squares solve, the multi-step backup against an
explicit state-by-state recursion, the system matrices against matrix
powers, and the horizons against linear scans of the defining predicates.
"""

import math

import numpy as np
import pytest

from conftest import horizon, make_setup, setup_battery, singular_setup

from tdhorizon import (
    ConfigurationError,
    NumericalError,
    SingularSystemError,
    bellman_n,
    contraction_horizon,
    error_bounds,
    fixed_point,
    hurwitz_horizon,
    load_problem,
    n_step_system,
    projection,
    true_solution,
    weighted_gram,
)


def project_oracle(setup, x):
    """Weighted least squares: Pi x = phi argmin_w ||phi w - x||_D."""
    sqrt_d = np.sqrt(setup.d_beta)
    w, *_ = np.linalg.lstsq(sqrt_d[:, None] * setup.features.phi, sqrt_d * x, rcond=None)
    return setup.features.phi @ w


def backup_oracle(setup, n, x):
    """n applications of the one-step expected backup, elementwise."""
    p = setup.kernel_target.p_pi
    r = setup.kernel_target.r_pi
    num_states = setup.num_states
    y = np.array(x, dtype=float)
    for _ in range(n):
        nxt = np.zeros(num_states)
        for s in range(num_states):
            acc = r[s]
            for t in range(num_states):
                acc += setup.gamma * p[s, t] * y[t]
            nxt[s] = acc
        y = nxt
    return y


def d_norm(setup, x):
    return math.sqrt(float(x @ (setup.d_beta * x)))


class TestProjection:
    def test_matches_least_squares_oracle(self):
        rng = np.random.default_rng(0)
        for setup in setup_battery(20):
            proj = projection(setup)
            for _ in range(5):
                x = rng.normal(size=setup.num_states)
                np.testing.assert_allclose(
                    proj.pi_matrix @ x, project_oracle(setup, x), atol=1e-10
                )

    def test_idempotent(self):
        for setup in setup_battery(20, seed0=40):
            p = projection(setup).pi_matrix
            assert np.max(np.abs(p @ p - p)) <= 1e-10

    def test_nonexpansive_in_weighted_norm(self):
        rng = np.random.default_rng(1)
        for setup in setup_battery(10, seed0=60):
            p = projection(setup).pi_matrix
            for _ in range(20):
                x = rng.normal(size=setup.num_states)
                y = rng.normal(size=setup.num_states)
                assert d_norm(setup, p @ (x - y)) <= d_norm(setup, x - y) + 1e-12

    def test_inf_norm_is_max_abs_row_sum(self):
        for setup in setup_battery(10, seed0=80):
            proj = projection(setup)
            expected = float(np.max(np.abs(proj.pi_matrix).sum(axis=1)))
            assert proj.inf_norm == expected

    def test_fixes_representable_vectors(self):
        setup = make_setup(7)
        theta = np.arange(1.0, setup.num_features + 1.0)
        v = setup.features.phi @ theta
        np.testing.assert_allclose(projection(setup).pi_matrix @ v, v, atol=1e-10)

    def test_gram_matches_definition(self):
        for setup in setup_battery(10, seed0=90):
            phi = setup.features.phi
            oracle = phi.T @ np.diag(setup.d_beta) @ phi
            np.testing.assert_allclose(weighted_gram(setup), oracle, atol=1e-12)


class TestBellmanBackup:
    def test_matches_recursion_oracle(self):
        rng = np.random.default_rng(2)
        for setup in setup_battery(12, seed0=200):
            for n in (1, 2, 5):
                x = rng.normal(size=setup.num_states)
                np.testing.assert_allclose(
                    bellman_n(setup, n, x), backup_oracle(setup, n, x), atol=1e-9
                )

    def test_accepts_stacked_columns(self):
        setup = make_setup(11)
        rng = np.random.default_rng(3)
        block = rng.normal(size=(setup.num_states, 4))
        stacked = bellman_n(setup, 3, block)
        for j in range(4):
            np.testing.assert_allclose(stacked[:, j], bellman_n(setup, 3, block[:, j]))

    def test_affine_in_input(self):
        setup = make_setup(12)
        rng = np.random.default_rng(4)
        x = rng.normal(size=setup.num_states)
        y = rng.normal(size=setup.num_states)
        tx = bellman_n(setup, 4, x)
        ty = bellman_n(setup, 4, y)
        mid = bellman_n(setup, 4, 0.5 * x + 0.5 * y)
        np.testing.assert_allclose(mid, 0.5 * tx + 0.5 * ty, atol=1e-10)

    def test_rejects_bad_n(self):
        setup = make_setup(13)
        x = np.zeros(setup.num_states)
        for bad in (0, -1, 1.5, True):
            with pytest.raises(ConfigurationError):
                bellman_n(setup, bad, x)


class TestNStepSystem:
    def test_matches_matrix_power_oracle(self):
        for setup in setup_battery(15, seed0=300):
            p = setup.kernel_target.p_pi
            r = setup.kernel_target.r_pi
            phi = setup.features.phi
            d = np.diag(setup.d_beta)
            for n in (1, 3, 7):
                system = n_step_system(setup, n)
                p_n = np.linalg.matrix_power(p, n)
                r_n = sum(
                    (setup.gamma**k) * (np.linalg.matrix_power(p, k) @ r) for k in range(n)
                )
                np.testing.assert_allclose(system.p_power, p_n, atol=1e-12)
                np.testing.assert_allclose(system.reward_n, r_n, atol=1e-11)
                a_oracle = phi.T @ d @ (phi - (setup.gamma**n) * (p_n @ phi))
                b_oracle = phi.T @ d @ r_n
                np.testing.assert_allclose(system.a_matrix, a_oracle, atol=1e-11)
                np.testing.assert_allclose(system.b_vector, b_oracle, atol=1e-11)

    def test_backup_consistency(self):
        # phi^T D (T^n(Phi theta) - Phi theta) = -A_n theta + b_n
        rng = np.random.default_rng(5)
        for setup in setup_battery(10, seed0=320):
            n = 4
            system = n_step_system(setup, n)
            phi = setup.features.phi
            theta = rng.normal(size=setup.num_features)
            lhs = (setup.d_beta[:, None] * phi).T @ (
                bellman_n(setup, n, phi @ theta) - phi @ theta
            )
            rhs = -(system.a_matrix @ theta) + system.b_vector
            np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestContractionHorizon:
    def test_formula_and_certificate(self):
        for setup in setup_battery(40, seed0=400):
            pin = projection(setup).inf_norm
            n_star = contraction_horizon(setup)
            assert (setup.gamma**n_star) * pin < 1.0
            if pin < 1.0 + 1e-10:
                assert n_star == 1
            else:
                expected = math.ceil(math.log(1.0 / pin) / math.log(setup.gamma)) + 1
                assert n_star == max(1, expected)

    def test_identity_features_give_one(self):
        # expansion-free representation: projection is the identity
        setup = make_setup(17, num_states=3, num_features=3)
        setup = _with_identity_features(setup)
        assert abs(projection(setup).inf_norm - 1.0) <= 1e-10
        assert contraction_horizon(setup) == 1

    def test_twostate_value(self):
        setup = load_problem("twostate").setup
        assert contraction_horizon(setup) == 20


def _with_identity_features(setup):
    from tdhorizon import FeatureMap, Policy, build_setup

    return build_setup(
        setup.base_mdp,
        Policy(setup.target_policy.probs),
        Policy(setup.behavior_policy.probs),
        FeatureMap(np.eye(setup.num_states)),
        d_beta_override=setup.d_beta,
    )


class TestHurwitzHorizon:
    def test_minimality_and_definiteness(self):
        for setup in setup_battery(25, seed0=500):
            report = hurwitz_horizon(setup, n_max=3000)
            assert report.n_bar_star is not None
            n_bar = report.n_bar_star
            rows = {row.n: row for row in report.per_n}
            assert rows[n_bar].sym_part_max_eigenvalue < 0.0
            for n in range(1, n_bar):
                assert rows[n].sym_part_max_eigenvalue >= 0.0

    def test_rows_match_direct_recomputation(self):
        setup = make_setup(21)
        report = hurwitz_horizon(setup)
        phi = setup.features.phi
        d = np.diag(setup.d_beta)
        p = setup.kernel_target.p_pi
        for row in report.per_n[:10]:
            b_n = (setup.gamma**row.n) * (
                phi.T @ d @ (np.linalg.matrix_power(p, row.n) @ phi)
            ) - weighted_gram(setup)
            sym_max = float(np.linalg.eigvalsh(b_n + b_n.T)[-1])
            assert abs(row.sym_part_max_eigenvalue - sym_max) <= 1e-10
            bound = (setup.gamma**row.n) * projection(setup).inf_norm
            assert abs(row.contraction_bound - bound) <= 1e-12

    def test_builtin_values(self):
        two = load_problem("twostate").setup
        report = hurwitz_horizon(two)
        assert report.n_star == 20
        assert report.n_bar_star == 19
        star = load_problem("baird-star").setup
        report = hurwitz_horizon(star)
        assert report.n_star == 20
        assert report.n_bar_star == 57

    def test_singular_witness_flagged(self):
        setup = singular_setup()
        report = hurwitz_horizon(setup)
        rows = {row.n: row for row in report.per_n}
        assert rows[1].a_n_nonsingular is False
        assert rows[2].a_n_nonsingular is True


class TestFixedPoint:
    def test_solves_projected_equation(self):
        for setup in setup_battery(20, seed0=600):
            n = horizon(setup)
            theta = fixed_point(setup, n)
            phi = setup.features.phi
            v = phi @ theta
            residual = projection(setup).pi_matrix @ bellman_n(setup, n, v) - v
            assert float(np.max(np.abs(residual))) <= 1e-8

    def test_matches_linear_solve_oracle(self):
        for setup in setup_battery(10, seed0=620):
            n = horizon(setup) + 2
            system = n_step_system(setup, n)
            oracle = np.linalg.solve(system.a_matrix, system.b_vector)
            np.testing.assert_allclose(fixed_point(setup, n), oracle, atol=1e-10)

    def test_singular_system_is_refused(self):
        with pytest.raises(SingularSystemError, match="no unique fixed point"):
            fixed_point(singular_setup(), 1)

    def test_twostate_zero(self):
        setup = load_problem("twostate").setup
        np.testing.assert_allclose(fixed_point(setup, 20), [0.0], atol=1e-15)


class TestTrueSolution:
    def test_matches_neumann_series(self):
        for setup in setup_battery(10, seed0=700):
            v_pi, theta_inf = true_solution(setup)
            p = setup.kernel_target.p_pi
            r = setup.kernel_target.r_pi
            series = np.zeros(setup.num_states)
            term = r.copy()
            for _ in range(5000):
                series += term
                term = setup.gamma * (p @ term)
                if float(np.max(np.abs(term))) < 1e-14:
                    break
            np.testing.assert_allclose(v_pi, series, atol=1e-10)
            np.testing.assert_allclose(
                setup.features.phi @ theta_inf,
                project_oracle(setup, v_pi),
                atol=1e-10,
            )

    def test_bellman_fixed_point(self):
        setup = make_setup(31)
        v_pi, _ = true_solution(setup)
        np.testing.assert_allclose(bellman_n(setup, 1, v_pi), v_pi, atol=1e-10)


class TestErrorBounds:
    def test_bound_dominates_actual(self):
        for setup in setup_battery(15, seed0=800):
            n_star = horizon(setup)
            for n in (n_star, n_star + 3):
                report = error_bounds(setup, n)
                assert report.actual_value_error <= report.bound_value + 1e-9
                assert report.actual_gap <= report.bound_gap + 1e-9

    def test_formula_recomputation(self):
        setup = make_setup(41)
        n = horizon(setup) + 1
        report = error_bounds(setup, n)
        proj = projection(setup)
        v_pi, _ = true_solution(setup)
        proj_err = float(np.max(np.abs(proj.pi_matrix @ v_pi - v_pi)))
        factor = (setup.gamma**n) * proj.inf_norm
        assert abs(report.bound_value - proj_err / (1.0 - factor)) <= 1e-12
        assert abs(report.bound_gap - factor * report.bound_value) <= 1e-12
        theta_n = fixed_point(setup, n)
        actual = float(np.max(np.abs(setup.features.phi @ theta_n - v_pi)))
        assert abs(report.actual_value_error - actual) <= 1e-12

    def test_rejects_subcritical_n(self):
        setup = load_problem("twostate").setup
        with pytest.raises(ConfigurationError, match="20"):
            error_bounds(setup, 19)

    def test_bounds_shrink_with_n(self):
        setup = load_problem("baird-star").setup
        # zero-reward problems have zero bounds; use a rewarded variant
        setup = make_setup(43, num_states=6, num_features=3, gamma=0.95)
        n_star = horizon(setup)
        values = [error_bounds(setup, n) for n in (n_star, n_star + 5, n_star + 10)]
        for a, b in zip(values, values[1:]):
            assert b.bound_value <= a.bound_value + 1e-12
            assert b.bound_gap < a.bound_gap
