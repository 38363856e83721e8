"""Shared battery helpers.

Tests draw setups from seeded generators so every run sees the same
instances. Size draws use a numpy Generator seeded per battery index; the
problem content itself comes from the package's own seeded generator, so a
battery index pins the whole instance.
"""

import numpy as np
import pytest

from tdhorizon import load_problem, random_problem
from tdhorizon.operators import contraction_horizon, hurwitz_horizon


def make_setup(
    seed,
    num_states=None,
    num_actions=None,
    num_features=None,
    gamma=None,
    max_states=8,
    max_features=4,
):
    """One random evaluation setup with sizes drawn from the seed."""
    rng = np.random.default_rng(seed)
    if num_states is None:
        num_states = int(rng.integers(2, max_states + 1))
    if num_actions is None:
        num_actions = int(rng.integers(1, 5))
    if num_features is None:
        num_features = int(rng.integers(1, min(max_features, num_states) + 1))
    if gamma is None:
        gamma = float(rng.uniform(0.85, 0.97))
    problem = random_problem(num_states, num_actions, num_features, seed=seed, gamma=gamma)
    return load_problem(problem).setup


def setup_battery(count, seed0=0, **kwargs):
    """Deterministic list of random setups."""
    return [make_setup(seed0 + i, **kwargs) for i in range(count)]


def make_on_policy_setup(seed, **kwargs):
    """Random setup with behavior equal to target (beta = pi)."""
    from tdhorizon import FeatureMap, FiniteMdp, Policy, build_setup

    setup = make_setup(seed, **kwargs)
    pi = Policy(setup.target_policy.probs)
    return build_setup(setup.base_mdp, pi, pi, FeatureMap(setup.features.phi))


def singular_setup():
    """Three aliased states, one action, everything jumps to the last state.

    With phi(s2) = phi(s0) + phi(s1) scaled by 2 and gamma = 0.75 the
    one-step system matrix comes out exactly rank one, so solvers must
    refuse to produce a unique fixed point at n = 1.
    """
    from tdhorizon import FeatureMap, FiniteMdp, Policy, build_setup

    transition = np.zeros((3, 1, 3))
    transition[:, 0, 2] = 1.0
    reward = np.ones((3, 1, 3))
    mdp = FiniteMdp(3, 1, transition, reward, 0.75)
    policy = Policy(np.ones((3, 1)))
    phi = FeatureMap([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    return build_setup(mdp, policy, policy, phi, d_beta_override=[1 / 3, 1 / 3, 1 / 3])


def stable_horizon(setup, cap=2000):
    """max(n_star, n_bar_star) for a setup; skips the test if out of range."""
    report = hurwitz_horizon(setup, n_max=cap)
    if report.n_bar_star is None:
        pytest.skip("no negative definite horizon within the scan cap")
    return max(report.n_star, report.n_bar_star)


def horizon(setup):
    return contraction_horizon(setup)


def stable_pick(setup, cap=2000):
    """Like stable_horizon but raises instead of skipping, for batteries."""
    report = hurwitz_horizon(setup, n_max=cap)
    if report.n_bar_star is None:
        raise ValueError("no negative definite horizon within the scan cap")
    return max(report.n_star, report.n_bar_star)


def conditioned_battery(count, seed0, pick_n, max_kappa=2000.0, **kwargs):
    """(setup, n) pairs whose quadratic objectives are well conditioned.

    Iterative solvers are compared on instances where the curvature ratio
    of both objectives stays below max_kappa, so agreement tests measure
    solver correctness rather than the iteration budget. Draws that fail
    the filter are skipped deterministically (the seed advances), keeping
    the battery reproducible.
    """
    from tdhorizon.solvers import ObjectiveKind, curvature

    out = []
    seed = seed0
    while len(out) < count:
        setup = make_setup(seed, **kwargs)
        seed += 1
        try:
            n = pick_n(setup)
        except Exception:
            continue
        ok = True
        for kind in (ObjectiveKind.PROJECTED, ObjectiveKind.GRAM_WEIGHTED):
            report = curvature(setup, n, kind)
            if report.mu <= 1e-12 or report.lip / report.mu > max_kappa:
                ok = False
                break
        if ok:
            out.append((setup, n))
    return out
