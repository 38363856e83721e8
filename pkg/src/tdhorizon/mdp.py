"""Finite MDP primitives for linear off-policy policy evaluation.

Defines the tabular model (transition and reward tensors, discount), policies,
feature maps, and the assembled evaluation problem: the target-policy kernel
(P_pi, R_pi), the behavior weighting d_beta, and the feature matrix Phi that
every operator downstream consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, RankError, StationaryDistributionError

ROW_SUM_TOL = 1e-12
RANK_RTOL = 1e-10
STATIONARY_MAX_ITERS = 100_000
STATIONARY_TOL = 1e-12
STATIONARY_RESIDUAL_TOL = 1e-10
STATIONARY_MASS_FLOOR = 1e-9


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    """Copy to a read-only float array so dataclass instances stay immutable."""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_distribution_rows(rows: np.ndarray, what: str) -> None:
    if np.any(rows < 0.0):
        idx = tuple(int(i) for i in np.unravel_index(int(np.argmin(rows)), rows.shape))
        raise ConfigurationError(f"{what}{idx} is negative: {float(rows[idx])!r}")
    sums = rows.sum(axis=-1)
    err = np.abs(sums - 1.0)
    if np.max(err) > ROW_SUM_TOL:
        idx = tuple(int(i) for i in np.unravel_index(int(np.argmax(err)), sums.shape))
        raise ConfigurationError(
            f"{what} row {idx} sums to {float(sums[idx])!r}, expected 1 within {ROW_SUM_TOL}"
        )


@dataclass(frozen=True)
class FiniteMdp:
    """A finite MDP (S, A, P, r, gamma) with dense tensors.

    transition[s, a, s'] is the probability of moving to s' after action a in
    state s; reward[s, a, s'] is the deterministic reward paid on that step.
    """

    num_states: int
    num_actions: int
    transition: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self):
        t = _frozen_array(self.transition)
        r = _frozen_array(self.reward)
        shape = (self.num_states, self.num_actions, self.num_states)
        if self.num_states < 1 or self.num_actions < 1:
            raise ConfigurationError("num_states and num_actions must be positive")
        if t.shape != shape:
            raise ConfigurationError(f"transition shape {t.shape} != {shape}")
        if r.shape != shape:
            raise ConfigurationError(f"reward shape {r.shape} != {shape}")
        _check_distribution_rows(t, "transition")
        if not (0.0 < float(self.gamma) < 1.0):
            raise ConfigurationError(f"gamma must lie strictly in (0, 1), got {self.gamma!r}")
        object.__setattr__(self, "num_states", int(self.num_states))
        object.__setattr__(self, "num_actions", int(self.num_actions))
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", float(self.gamma))


@dataclass(frozen=True)
class Policy:
    """A stochastic policy: probs[s, a] = probability of action a in state s."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.probs)
        if p.ndim != 2:
            raise ConfigurationError(f"policy must be a (states, actions) matrix, got shape {p.shape}")
        _check_distribution_rows(p, "policy")
        object.__setattr__(self, "probs", p)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class PolicyKernel:
    """State transition matrix and expected one-step reward under one policy.

    p_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)
    r_pi[s]     = sum_a pi(a|s) sum_{s'} P(s'|s, a) r(s, a, s')
    """

    p_pi: np.ndarray
    r_pi: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.p_pi)
        r = _frozen_array(self.r_pi)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ConfigurationError(f"p_pi must be square, got shape {p.shape}")
        if r.shape != (p.shape[0],):
            raise ConfigurationError(f"r_pi shape {r.shape} does not match p_pi {p.shape}")
        _check_distribution_rows(p, "p_pi")
        object.__setattr__(self, "p_pi", p)
        object.__setattr__(self, "r_pi", r)

    @property
    def num_states(self) -> int:
        return self.p_pi.shape[0]


@dataclass(frozen=True)
class FeatureMap:
    """Feature matrix Phi of shape (states, m), m <= states, full column rank."""

    phi: np.ndarray

    def __post_init__(self):
        phi = _frozen_array(self.phi)
        if phi.ndim != 2:
            raise ConfigurationError(f"phi must be a 2-d matrix, got shape {phi.shape}")
        num_states, m = phi.shape
        if m < 1:
            raise ConfigurationError("phi needs at least one feature column")
        if m > num_states:
            raise ConfigurationError(
                f"phi has more columns ({m}) than states ({num_states}); m <= |S| is required"
            )
        sv = np.linalg.svd(phi, compute_uv=False)
        if sv[0] <= 0.0 or sv[-1] <= RANK_RTOL * sv[0]:
            raise RankError(
                f"phi is rank deficient: singular values span [{sv[-1]!r}, {sv[0]!r}], "
                f"relative threshold {RANK_RTOL}"
            )
        object.__setattr__(self, "phi", phi)

    @property
    def num_states(self) -> int:
        return self.phi.shape[0]

    @property
    def num_features(self) -> int:
        return self.phi.shape[1]


@dataclass(frozen=True)
class EvaluationSetup:
    """Everything a policy-evaluation operator needs, assembled and validated.

    Holds the target kernel (P_pi, R_pi), the feature matrix, the positive
    state weighting d_beta (diagonal of D), the discount, and the off-policy
    pair (target_policy, behavior_policy) for the sampling algorithms.
    """

    base_mdp: FiniteMdp
    target_policy: Policy
    behavior_policy: Policy
    kernel_target: PolicyKernel
    features: FeatureMap
    d_beta: np.ndarray
    gamma: float

    def __post_init__(self):
        mdp = self.base_mdp
        d = _frozen_array(self.d_beta)
        num_states = mdp.num_states
        for name, policy in (("target", self.target_policy), ("behavior", self.behavior_policy)):
            if policy.probs.shape != (num_states, mdp.num_actions):
                raise ConfigurationError(
                    f"{name} policy shape {policy.probs.shape} does not match the MDP "
                    f"({num_states} states, {mdp.num_actions} actions)"
                )
        if self.kernel_target.num_states != num_states:
            raise ConfigurationError("kernel_target size does not match the MDP")
        if self.features.num_states != num_states:
            raise ConfigurationError(
                f"phi has {self.features.num_states} rows for {num_states} states"
            )
        if d.shape != (num_states,):
            raise ConfigurationError(f"d_beta shape {d.shape}, expected ({num_states},)")
        if np.any(d <= 0.0):
            s = int(np.argmin(d))
            raise ConfigurationError(f"d_beta[{s}] = {d[s]!r} must be strictly positive")
        if abs(float(d.sum()) - 1.0) > ROW_SUM_TOL:
            raise ConfigurationError(f"d_beta sums to {d.sum()!r}, expected 1")
        if float(self.gamma) != mdp.gamma:
            raise ConfigurationError("gamma does not match base_mdp.gamma")
        # kernel_target must be derived from (base_mdp, target_policy)
        fresh = policy_kernel(mdp, self.target_policy)
        if not (
            np.allclose(fresh.p_pi, self.kernel_target.p_pi, rtol=0.0, atol=1e-12)
            and np.allclose(fresh.r_pi, self.kernel_target.r_pi, rtol=0.0, atol=1e-12)
        ):
            raise ConfigurationError("kernel_target is not derived from base_mdp and target_policy")
        # importance-sampling support condition, validated once here
        violation = (self.target_policy.probs > 0.0) & (self.behavior_policy.probs == 0.0)
        if np.any(violation):
            s, a = np.argwhere(violation)[0]
            raise ConfigurationError(
                f"behavior policy has zero probability at (s={s}, a={a}) where the "
                "target policy is positive; importance sampling is undefined"
            )
        object.__setattr__(self, "d_beta", d)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def num_states(self) -> int:
        return self.base_mdp.num_states

    @property
    def num_features(self) -> int:
        return self.features.num_features


def policy_kernel(mdp: FiniteMdp, policy: Policy) -> PolicyKernel:
    """Average the MDP tensors under a policy into (P_pi, R_pi)."""
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise ConfigurationError(
            f"policy shape {policy.probs.shape} does not match the MDP "
            f"({mdp.num_states} states, {mdp.num_actions} actions)"
        )
    p = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    r = np.einsum("sa,sat,sat->s", policy.probs, mdp.transition, mdp.reward)
    return PolicyKernel(p_pi=p, r_pi=r)


def stationary_distribution(mdp: FiniteMdp, policy: Policy) -> np.ndarray:
    """Stationary distribution of the chain induced by a policy.

    Damped power iteration on the left: d <- 0.5 d + 0.5 (d^T P)^T, which
    converges for periodic chains too. Fails loudly (rather than guessing) on
    chains that do not mix or do not visit every state.
    """
    p = policy_kernel(mdp, policy).p_pi
    num_states = mdp.num_states
    d = np.full(num_states, 1.0 / num_states)
    converged = False
    for _ in range(STATIONARY_MAX_ITERS):
        d_next = 0.5 * d + 0.5 * (d @ p)
        d_next /= d_next.sum()
        if float(np.max(np.abs(d_next - d))) <= STATIONARY_TOL:
            d = d_next
            converged = True
            break
        d = d_next
    residual = float(np.max(np.abs(d @ p - d)))
    if not converged or residual > STATIONARY_RESIDUAL_TOL:
        raise StationaryDistributionError(
            f"power iteration did not reach a stationary distribution "
            f"(residual {residual!r}); supply d_beta explicitly"
        )
    if np.any(d <= STATIONARY_MASS_FLOOR):
        s = int(np.argmin(d))
        raise StationaryDistributionError(
            f"stationary distribution assigns (near) zero mass to state {s}, "
            f"which the damped iteration cannot distinguish from a transient "
            "state; supply d_beta explicitly"
        )
    d = d / d.sum()
    d.setflags(write=False)
    return d


def build_setup(
    mdp: FiniteMdp,
    pi: Policy,
    beta: Policy,
    phi: FeatureMap,
    d_beta_override=None,
) -> EvaluationSetup:
    """Assemble an EvaluationSetup, defaulting d_beta to the stationary
    distribution of the behavior chain."""
    kernel = policy_kernel(mdp, pi)
    if d_beta_override is None:
        d = stationary_distribution(mdp, beta)
    else:
        d = np.array(d_beta_override, dtype=np.float64)
        if d.shape != (mdp.num_states,):
            raise ConfigurationError(
                f"d_beta override shape {d.shape}, expected ({mdp.num_states},)"
            )
        if np.any(d <= 0.0):
            s = int(np.argmin(d))
            raise ConfigurationError(f"d_beta override entry {s} is not strictly positive")
        total = float(d.sum())
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"d_beta override sums to {total!r}, expected 1 within 1e-9")
        if abs(total - 1.0) > ROW_SUM_TOL:
            d = d / total
    return EvaluationSetup(
        base_mdp=mdp,
        target_policy=pi,
        behavior_policy=beta,
        kernel_target=kernel,
        features=phi,
        d_beta=d,
        gamma=mdp.gamma,
    )
