"""Stochastic n-step TD and gradient TD on sampled trajectories.

Sampling model: each iteration draws an independent length-n trajectory.
The start state comes from d_beta, actions from the behavior policy, next
states from the transition kernel. The update reweights by the full
importance ratio rho = prod_k pi(a_k|s_k) / beta(a_k|s_k).

Determinism contract: every run is a pure function of (setup, n, algorithm,
schedule, iters, seed, initial point). Trajectories are presampled in chunks
of CHUNK_SIZE; numpy Generators fill multi-dimensional requests from the
same stream in row-major order, so the chunked draws consume the stream
exactly as one rng.random(1 + 2n) call per trajectory would. Categorical
draws use the normalized-cumsum rule s = argmax(cumsum(p)/sum(p) > u),
which never selects a zero-probability entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .exceptions import ConfigurationError, EnumerationLimitError, SingularSystemError
from .mdp import EvaluationSetup
from .operators import _check_n, fixed_point, n_step_system, weighted_gram

RNG_LABEL = "numpy-philox4x64-10"
CHUNK_SIZE = 65_536
DIVERGENCE_LIMIT = 1e9
ENUMERATION_LIMIT = 10_000_000

ALGO_NTD = "ntd"
ALGO_NGTD = "ngtd"


def make_rng(seed: int) -> np.random.Generator:
    """Philox-backed generator; counter-based, so streams are reproducible
    across platforms for a given integer seed."""
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0:
        raise ConfigurationError(f"seed must be a nonnegative integer, got {seed!r}")
    return np.random.Generator(np.random.Philox(int(seed)))


def _normalize_algo(algo) -> str:
    token = str(algo).strip().lower().replace("-", "").replace("_", "")
    if token not in (ALGO_NTD, ALGO_NGTD):
        raise ConfigurationError(
            f"unknown sampled algorithm {algo!r}; expected '{ALGO_NTD}' or '{ALGO_NGTD}'"
        )
    return token


@dataclass(frozen=True)
class StepSizeSchedule:
    """Robbins-Monro step sizes alpha_i = a / (b + i)**c for i = 0, 1, ...

    Requires a > 0, b > 0, and 0.5 < c <= 1 so that the steps are square
    summable but not summable.
    """

    a: float
    b: float
    c: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.a > 0.0):
            raise ConfigurationError(f"schedule requires a > 0, got a={self.a!r}")
        if not (self.b > 0.0):
            raise ConfigurationError(f"schedule requires b > 0, got b={self.b!r}")
        if not (0.5 < self.c <= 1.0):
            raise ConfigurationError(f"schedule requires 0.5 < c <= 1, got c={self.c!r}")

    def alpha(self, i: int) -> float:
        return self.a / (self.b + i) ** self.c

    def alphas(self, count: int) -> np.ndarray:
        # built from scalar calls so batched and one-at-a-time runs agree bitwise
        return np.array([self.alpha(i) for i in range(count)], dtype=np.float64)

    def label(self) -> str:
        return f"rm(a={self.a!r},b={self.b!r},c={self.c!r})"


DEFAULT_SCHEDULE = StepSizeSchedule(0.5, 1000.0, 1.0)

ScheduleLike = Union[StepSizeSchedule, float, int]


def _resolve_schedule(schedule: ScheduleLike):
    """Accept a StepSizeSchedule or a positive constant step size.

    Returns (alpha_fn, label).
    """
    if isinstance(schedule, StepSizeSchedule):
        return schedule.alpha, schedule.label()
    if isinstance(schedule, (float, int)) and not isinstance(schedule, bool):
        value = float(schedule)
        if value <= 0.0:
            raise ConfigurationError(f"constant step size must be positive, got {value!r}")
        return (lambda i: value), f"constant({value!r})"
    raise ConfigurationError(
        f"schedule must be a StepSizeSchedule or a positive number, got {schedule!r}"
    )


@dataclass(frozen=True)
class TrajectorySample:
    """One length-n trajectory: n+1 states, n actions and rewards, and the
    accumulated importance ratio over all n actions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    rho: float

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int64)
        actions = np.array(self.actions, dtype=np.int64)
        rewards = np.array(self.rewards, dtype=np.float64)
        for arr in (states, actions, rewards):
            arr.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "rho", float(self.rho))
        if self.states.ndim != 1 or self.actions.shape != (self.states.shape[0] - 1,):
            raise ConfigurationError("trajectory arrays have inconsistent lengths")
        if self.rewards.shape != self.actions.shape:
            raise ConfigurationError("trajectory arrays have inconsistent lengths")

    @property
    def horizon(self) -> int:
        return int(self.actions.shape[0])


def _pick(probs: np.ndarray, u: float) -> int:
    """Categorical draw by normalized cumulative sums; never returns an index
    whose probability is zero."""
    cum = np.cumsum(probs)
    cum = cum / cum[-1]
    return int(np.argmax(cum > u))


def _pick_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise version of _pick, bitwise identical per row."""
    cum = np.cumsum(probs, axis=1)
    cum = cum / cum[:, -1:]
    return np.argmax(cum > u[:, None], axis=1)


def _importance_ratio(setup: EvaluationSetup) -> np.ndarray:
    """Elementwise pi/beta with 0 where beta is 0 (there pi is 0 as well,
    by the setup's support check, and such actions are never drawn)."""
    pi = setup.target_policy.probs
    beta = setup.behavior_policy.probs
    ratio = np.zeros_like(pi)
    np.divide(pi, beta, out=ratio, where=beta > 0.0)
    return ratio


def _discounts(gamma: float, n: int) -> List[float]:
    return [float(gamma) ** k for k in range(n)]


def sample_trajectory(setup: EvaluationSetup, n: int, rng: np.random.Generator) -> TrajectorySample:
    """Draw one length-n trajectory, consuming exactly 1 + 2n uniforms:
    one for the start state, then one per action and one per transition."""
    _check_n(n)
    u = rng.random(1 + 2 * n)
    beta = setup.behavior_policy.probs
    transition = setup.base_mdp.transition
    reward = setup.base_mdp.reward
    ratio = _importance_ratio(setup)

    states = np.empty(n + 1, dtype=np.int64)
    actions = np.empty(n, dtype=np.int64)
    rewards = np.empty(n, dtype=np.float64)
    states[0] = _pick(setup.d_beta, u[0])
    rho = 1.0
    for k in range(n):
        s = states[k]
        a = _pick(beta[s], u[1 + 2 * k])
        s_next = _pick(transition[s, a], u[2 + 2 * k])
        actions[k] = a
        states[k + 1] = s_next
        rewards[k] = reward[s, a, s_next]
        rho = rho * ratio[s, a]
    return TrajectorySample(states=states, actions=actions, rewards=rewards, rho=rho)


def _sample_batch(
    setup: EvaluationSetup, n: int, rng: np.random.Generator, count: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Draw `count` trajectories at once, reduced to what the updates need:
    start states, end states, importance ratios, discounted reward sums.

    Consumes the stream exactly as `count` sample_trajectory calls would and
    computes every per-trajectory number with the same operation order.
    """
    u = rng.random((count, 1 + 2 * n))
    beta = setup.behavior_policy.probs
    transition = setup.base_mdp.transition
    reward = setup.base_mdp.reward
    ratio = _importance_ratio(setup)
    disc = _discounts(setup.gamma, n)

    start = _pick_rows(np.broadcast_to(setup.d_beta, (count, setup.num_states)), u[:, 0])
    state = start
    rho = np.ones(count, dtype=np.float64)
    ret = np.zeros(count, dtype=np.float64)
    for k in range(n):
        action = _pick_rows(beta[state], u[:, 1 + 2 * k])
        nxt = _pick_rows(transition[state, action], u[:, 2 + 2 * k])
        rho = rho * ratio[state, action]
        ret = ret + disc[k] * reward[state, action, nxt]
        state = nxt
    return start, state, rho, ret


def _trajectory_return(setup: EvaluationSetup, sample: TrajectorySample) -> float:
    disc = _discounts(setup.gamma, sample.horizon)
    ret = 0.0
    for k in range(sample.horizon):
        ret = ret + disc[k] * float(sample.rewards[k])
    return ret


def ntd_step(
    setup: EvaluationSetup, theta: np.ndarray, alpha: float, sample: TrajectorySample
) -> np.ndarray:
    """One n-step TD update from one trajectory.

    Bootstrapped return G = sum_k gamma^k r_k + gamma^n phi(s_n)^T theta;
    theta' = theta + alpha rho (G - phi(s_0)^T theta) phi(s_0).
    """
    theta = np.asarray(theta, dtype=np.float64)
    phi = setup.features.phi
    n = sample.horizon
    phi0 = phi[sample.states[0]]
    phin = phi[sample.states[n]]
    g_return = _trajectory_return(setup, sample) + (setup.gamma**n) * float(phin @ theta)
    delta = g_return - float(phi0 @ theta)
    return theta + (alpha * sample.rho * delta) * phi0


def ngtd_step(
    setup: EvaluationSetup,
    theta: np.ndarray,
    lam: np.ndarray,
    alpha: float,
    sample: TrajectorySample,
) -> Tuple[np.ndarray, np.ndarray]:
    """One n-step gradient TD (saddle point) update from one trajectory.

    With G the bootstrapped return and w = phi(s_0)^T lam:
      theta' = theta + alpha rho w (phi(s_0) - gamma^n phi(s_n))
      lam'   = lam + alpha rho (G - phi(s_0)^T theta - w) phi(s_0)
    Both use the pre-update theta and lam. The saddle point is theta = the
    fixed-point solution at this n and lam = 0.
    """
    theta = np.asarray(theta, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    phi = setup.features.phi
    n = sample.horizon
    phi0 = phi[sample.states[0]]
    phin = phi[sample.states[n]]
    gamma_n = setup.gamma**n
    g_return = _trajectory_return(setup, sample) + gamma_n * float(phin @ theta)
    w = float(phi0 @ lam)
    theta_new = theta + (alpha * sample.rho * w) * (phi0 - gamma_n * phin)
    lam_new = lam + (alpha * sample.rho * (g_return - float(phi0 @ theta) - w)) * phi0
    return theta_new, lam_new


@dataclass(frozen=True)
class StochTrace:
    """Logged states of a sampled run.

    Rows correspond to logged_iters (iteration counts after that many
    updates; 0 is the initial point, the final iteration is always logged).
    dist_to_fixed_point is NaN when no unique fixed point exists at this n.
    """

    algorithm: str
    n: int
    seed: int
    schedule_label: str
    log_every: int
    iterations: int
    logged_iters: np.ndarray
    thetas: np.ndarray
    lambdas: Optional[np.ndarray]
    dist_to_fixed_point: np.ndarray
    diverged: bool
    rng_label: str

    def __post_init__(self):
        for name in ("logged_iters", "thetas", "dist_to_fixed_point"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.lambdas is not None:
            arr = np.array(self.lambdas, dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, "lambdas", arr)

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]

    @property
    def final_lambda(self) -> Optional[np.ndarray]:
        return None if self.lambdas is None else self.lambdas[-1]


def _prepare_vector(setup: EvaluationSetup, value, name: str) -> np.ndarray:
    if value is None:
        return np.zeros(setup.num_features)
    arr = np.array(value, dtype=np.float64)
    if arr.shape != (setup.num_features,):
        raise ConfigurationError(
            f"{name} has shape {arr.shape}, expected ({setup.num_features},)"
        )
    return arr


def run_stochastic(
    setup: EvaluationSetup,
    n: int,
    algorithm: str,
    schedule: ScheduleLike = DEFAULT_SCHEDULE,
    iters: int = 100_000,
    seed: int = 0,
    log_every: int = 1000,
    theta0=None,
    lambda0=None,
) -> StochTrace:
    """Run n-step TD or gradient TD on freshly sampled trajectories.

    Composes exactly the single-trajectory steps (ntd_step / ngtd_step) on
    the stream of sample_trajectory draws for the given seed; trajectories
    are presampled in chunks purely for speed. A run stops early once any
    parameter magnitude exceeds DIVERGENCE_LIMIT or turns nonfinite; that is
    a recorded outcome, not an error.
    """
    _check_n(n)
    algorithm = _normalize_algo(algorithm)
    alpha_fn, schedule_label = _resolve_schedule(schedule)
    if not isinstance(iters, (int, np.integer)) or isinstance(iters, bool) or iters < 1:
        raise ConfigurationError(f"iters must be a positive integer, got {iters!r}")
    if not isinstance(log_every, (int, np.integer)) or isinstance(log_every, bool) or log_every < 1:
        raise ConfigurationError(f"log_every must be a positive integer, got {log_every!r}")
    iters = int(iters)
    log_every = int(log_every)
    rng = make_rng(seed)

    phi = setup.features.phi
    gamma_n = setup.gamma**n
    theta = _prepare_vector(setup, theta0, "theta0")
    track_lambda = algorithm == ALGO_NGTD
    lam = _prepare_vector(setup, lambda0, "lambda0") if track_lambda else None

    try:
        theta_star = fixed_point(setup, n)
    except SingularSystemError:
        theta_star = None

    logged_iters: List[int] = []
    thetas: List[np.ndarray] = []
    lambdas: List[np.ndarray] = []
    dists: List[float] = []

    def log(i: int) -> None:
        logged_iters.append(i)
        thetas.append(theta.copy())
        if track_lambda:
            lambdas.append(lam.copy())
        dists.append(
            float(np.linalg.norm(theta - theta_star)) if theta_star is not None else float("nan")
        )

    log(0)
    diverged = False
    completed = 0
    batch_start = 0
    batch = None
    for i in range(iters):
        if batch is None or i - batch_start >= batch[0].shape[0]:
            batch_start = i
            batch = _sample_batch(setup, n, rng, min(CHUNK_SIZE, iters - i))
        j = i - batch_start
        start_b, end_b, rho_b, ret_b = batch
        rho = float(rho_b[j])
        if rho != 0.0:  # zero-weight trajectories leave the parameters unchanged
            alpha = alpha_fn(i)
            phi0 = phi[start_b[j]]
            phin = phi[end_b[j]]
            g_return = ret_b[j] + gamma_n * float(phin @ theta)
            if track_lambda:
                w = float(phi0 @ lam)
                theta_new = theta + (alpha * rho * w) * (phi0 - gamma_n * phin)
                lam = lam + (alpha * rho * (g_return - float(phi0 @ theta) - w)) * phi0
                theta = theta_new
            else:
                delta = g_return - float(phi0 @ theta)
                theta = theta + (alpha * rho * delta) * phi0
        completed = i + 1
        if rho != 0.0:
            extreme = float(np.max(np.abs(theta)))
            if track_lambda:
                extreme = max(extreme, float(np.max(np.abs(lam))))
            if not np.isfinite(extreme) or extreme > DIVERGENCE_LIMIT:
                diverged = True
        if completed % log_every == 0 or completed == iters or diverged:
            log(completed)
        if diverged:
            break

    return StochTrace(
        algorithm=algorithm,
        n=n,
        seed=int(seed),
        schedule_label=schedule_label,
        log_every=log_every,
        iterations=completed,
        logged_iters=np.array(logged_iters, dtype=np.int64),
        thetas=np.array(thetas),
        lambdas=np.array(lambdas) if track_lambda else None,
        dist_to_fixed_point=np.array(dists),
        diverged=diverged,
        rng_label=RNG_LABEL,
    )


class PathEnumerator:
    """Exact per-horizon expectations by enumerating all behavior-policy
    trajectories up to a depth cap.

    For each depth k <= n_max this accumulates, over every positive
    probability path with nonzero importance ratio (zero-ratio paths
    contribute nothing to any statistic below):

      return_stat[k] = E[rho_k ret_k phi(s_0)]          (m,)
      cross_stat[k]  = E[rho_k phi(s_0) phi(s_k)^T]     (m, m)

    where ret_k is the discounted reward sum over the first k steps and
    rho_k the importance ratio over the first k actions. The expansion is
    aborted when a single step would materialize more than
    ENUMERATION_LIMIT candidate paths.
    """

    def __init__(self, setup: EvaluationSetup, n_max: int):
        _check_n(n_max)
        self.setup = setup
        self.n_max = int(n_max)
        m = setup.num_features
        self.return_stat = [np.zeros(m) for _ in range(self.n_max + 1)]
        self.cross_stat = [np.zeros((m, m)) for _ in range(self.n_max + 1)]
        self._enumerate()

    def _enumerate(self) -> None:
        setup = self.setup
        num_states = setup.num_states
        num_actions = setup.base_mdp.num_actions
        phi = setup.features.phi
        beta = setup.behavior_policy.probs
        transition = setup.base_mdp.transition
        reward = setup.base_mdp.reward
        ratio = _importance_ratio(setup)
        disc = _discounts(setup.gamma, self.n_max)

        for s0 in range(num_states):
            root_weight = float(setup.d_beta[s0])
            phi0 = phi[s0]
            states = np.array([s0], dtype=np.int64)
            prob = np.array([root_weight])
            rho = np.ones(1)
            ret = np.zeros(1)
            for depth in range(self.n_max + 1):
                weight = prob * rho
                self.return_stat[depth] += float(weight @ ret) * phi0
                per_state = np.bincount(states, weights=weight, minlength=num_states)
                self.cross_stat[depth] += np.outer(phi0, per_state @ phi)
                if depth == self.n_max:
                    break
                live = states.shape[0]
                candidates = live * num_actions * num_states
                if candidates > ENUMERATION_LIMIT:
                    raise EnumerationLimitError(
                        f"enumeration to depth {depth + 1} needs {candidates} candidate "
                        f"paths, above the limit of {ENUMERATION_LIMIT}"
                    )
                idx = np.repeat(np.arange(live), num_actions * num_states)
                act = np.tile(np.repeat(np.arange(num_actions), num_states), live)
                nxt = np.tile(np.arange(num_states), live * num_actions)
                src = states[idx]
                step_prob = beta[src, act] * transition[src, act, nxt]
                new_rho = rho[idx] * ratio[src, act]
                keep = (step_prob > 0.0) & (new_rho != 0.0)
                states = nxt[keep]
                prob = prob[idx[keep]] * step_prob[keep]
                rho = new_rho[keep]
                ret = ret[idx[keep]] + disc[depth] * reward[src[keep], act[keep], nxt[keep]]

    def expected_update(self, n: int, algorithm: str, theta, lam=None):
        """Exact expected parameter increment per unit step size.

        ntd:  E[rho (G - phi_0^T theta) phi_0]
        ngtd: (E over the theta update, E over the lam update), both per
        unit step size and at the given pre-update point.
        """
        _check_n(n)
        if n > self.n_max:
            raise ConfigurationError(f"n={n} exceeds the enumerated depth {self.n_max}")
        algorithm = _normalize_algo(algorithm)
        setup = self.setup
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (setup.num_features,):
            raise ConfigurationError(
                f"theta has shape {theta.shape}, expected ({setup.num_features},)"
            )
        gamma_n = setup.gamma**n
        sr = self.return_stat[n]
        cross = self.cross_stat[n]  # E[rho phi_0 phi_n^T]
        gram0 = self.cross_stat[0]  # E[phi_0 phi_0^T]
        if algorithm == ALGO_NTD:
            if lam is not None:
                raise ConfigurationError("ntd has no lam parameter")
            return sr + gamma_n * (cross @ theta) - gram0 @ theta
        lam = np.asarray(lam, dtype=np.float64) if lam is not None else np.zeros_like(theta)
        if lam.shape != theta.shape:
            raise ConfigurationError(f"lam has shape {lam.shape}, expected {theta.shape}")
        d_theta = gram0 @ lam - gamma_n * (cross.T @ lam)
        d_lam = sr + gamma_n * (cross @ theta) - gram0 @ theta - gram0 @ lam
        return d_theta, d_lam


def expected_update(setup: EvaluationSetup, n: int, algorithm: str, theta, lam=None):
    """One-shot wrapper around PathEnumerator for a single horizon."""
    return PathEnumerator(setup, n).expected_update(n, algorithm, theta, lam)


def ode_direction(setup: EvaluationSetup, n: int, algorithm: str, theta, lam=None):
    """Mean-field drift of the sampled updates, from the model matrices.

    ntd:  b_n + B_n theta
    ngtd: ((G - gamma^n C^T) lam, b_n + B_n theta - G lam) with
    C = Phi^T D P^n Phi. Matches expected_update up to floating point.
    """
    _check_n(n)
    algorithm = _normalize_algo(algorithm)
    theta = np.asarray(theta, dtype=np.float64)
    system = n_step_system(setup, n)
    b_matrix = -system.a_matrix
    drift = b_matrix @ theta + system.b_vector
    if algorithm == ALGO_NTD:
        if lam is not None:
            raise ConfigurationError("ntd has no lam parameter")
        return drift
    lam = np.asarray(lam, dtype=np.float64) if lam is not None else np.zeros_like(theta)
    gram = weighted_gram(setup)
    phi = setup.features.phi
    cross = (setup.d_beta[:, None] * phi).T @ (system.p_power @ phi)
    d_theta = gram @ lam - (setup.gamma**n) * (cross.T @ lam)
    d_lam = drift - gram @ lam
    return d_theta, d_lam
