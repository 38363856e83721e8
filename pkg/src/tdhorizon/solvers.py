"""Deterministic solvers for the n-step projected Bellman equation.

Three algorithm families, all with rate certificates:

  projected value iteration   theta <- G^{-1} Phi^T D T^n(Phi theta)
  gradient descent            theta <- theta - alpha grad f(theta)
  Richardson (system) iteration  theta <- theta + alpha Phi^T D (T^n - I)(Phi theta)

where G = Phi^T D Phi. Two scalar objectives are supported. Both share the
expected-update statistic g(theta) = Phi^T D (T^n(Phi theta) - Phi theta)
= B_n theta + b_n and differ only in the m x m weight W:

  projected objective  f(theta) = 0.5 ||Pi T^n(Phi theta) - Phi theta||^2_D
                                = 0.5 g^T G^{-1} g            (W = G^{-1})
  Gram-weighted        f(theta) = 0.5 g^T G g                 (W = G)

Either choice has gradient B_n^T W g, Hessian Gamma = B_n^T W B_n, and the
same stationary point whenever B_n is nonsingular.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import ConfigurationError, NumericalError, SingularSystemError
from .mdp import EvaluationSetup
from .operators import (
    bellman_n,
    fixed_point,
    n_step_system,
    projection,
    weighted_gram,
)

DEFAULT_MAX_ITERS = 100_000
DEFAULT_TOL = 1e-10
DIVERGENCE_LIMIT = 1e9
RATE_SLACK = 1e-9
SCHUR_MARGIN = 1e-12


class ObjectiveKind(enum.Enum):
    """Which scalar objective the gradient machinery targets."""

    PROJECTED = "projected"  # 0.5 ||Pi T^n(Phi theta) - Phi theta||^2_D, weight G^{-1}
    GRAM_WEIGHTED = "gram"  # 0.5 g^T G g on the expected update g, weight G


def as_objective_kind(kind) -> ObjectiveKind:
    if isinstance(kind, ObjectiveKind):
        return kind
    try:
        return ObjectiveKind(str(kind).lower())
    except ValueError:
        valid = ", ".join(k.value for k in ObjectiveKind)
        raise ConfigurationError(f"unknown objective kind {kind!r}; expected one of: {valid}")


@dataclass(frozen=True)
class CurvatureReport:
    """Hessian Gamma = B_n^T W B_n with its extreme eigenvalues and GD step."""

    kind: ObjectiveKind
    n: int
    hessian: np.ndarray
    mu: float  # lambda_min(Gamma), clamped at 0
    lip: float  # lambda_max(Gamma) = ||Gamma||_2
    step_size: float  # 2 / (mu + lip)
    weight: str  # which W was used: "gram_inverse" or "gram"

    def __post_init__(self):
        arr = np.array(self.hessian, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "hessian", arr)


@dataclass(frozen=True)
class IterTrace:
    """Per-iteration record of a deterministic solver run.

    residual_inf[k] = ||Phi theta_k - Pi T^n(Phi theta_k)||_inf.
    dist_to_fixed_point is NaN when no unique fixed point exists at this n.
    """

    thetas: np.ndarray
    residual_inf: np.ndarray
    dist_to_fixed_point: np.ndarray
    converged: bool
    iterations_used: int
    diverged: bool
    tolerance: float

    def __post_init__(self):
        for name in ("thetas", "residual_inf", "dist_to_fixed_point"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]

    @property
    def final_residual(self) -> float:
        return float(self.residual_inf[-1])


def _prepare_theta0(setup: EvaluationSetup, theta0) -> np.ndarray:
    if theta0 is None:
        return np.zeros(setup.num_features)
    theta = np.array(theta0, dtype=np.float64)
    if theta.shape != (setup.num_features,):
        raise ConfigurationError(
            f"theta0 has shape {theta.shape}, expected ({setup.num_features},)"
        )
    return theta


def _check_iter_params(max_iters, tol) -> Tuple[int, float]:
    if not isinstance(max_iters, (int, np.integer)) or max_iters < 1:
        raise ConfigurationError(f"max_iters must be a positive integer, got {max_iters!r}")
    tol = float(tol)
    if tol <= 0.0:
        raise ConfigurationError(f"tol must be positive, got {tol!r}")
    return int(max_iters), tol


class _ResidualMap:
    """Affine form of the projected residual Phi theta - Pi T^n(Phi theta)."""

    def __init__(self, setup: EvaluationSetup, n: int, system, proj):
        phi = setup.features.phi
        self.matrix = phi - (setup.gamma**n) * (proj.pi_matrix @ (system.p_power @ phi))
        self.offset = proj.pi_matrix @ system.reward_n

    def inf_norm(self, theta: np.ndarray) -> float:
        return float(np.max(np.abs(self.matrix @ theta - self.offset)))


def _try_fixed_point(setup: EvaluationSetup, n: int) -> Optional[np.ndarray]:
    try:
        return fixed_point(setup, n)
    except SingularSystemError:
        return None


def _run_affine_iteration(
    setup: EvaluationSetup,
    n: int,
    step,
    theta0,
    max_iters: int,
    tol: float,
    rate_check=None,
) -> IterTrace:
    """Shared driver: iterate theta <- step(theta), tracing residuals and
    distances, stopping on tolerance, divergence, or the iteration budget."""
    system = n_step_system(setup, n)
    proj = projection(setup)
    residual_map = _ResidualMap(setup, n, system, proj)
    theta_star = _try_fixed_point(setup, n)

    theta = _prepare_theta0(setup, theta0)
    thetas = [theta.copy()]
    residuals = [residual_map.inf_norm(theta)]
    dists = [
        float(np.linalg.norm(theta - theta_star)) if theta_star is not None else float("nan")
    ]
    diverged = False
    k = 0
    while k < max_iters:
        if residuals[-1] <= tol:
            break
        if not np.all(np.isfinite(theta)) or float(np.max(np.abs(theta))) > DIVERGENCE_LIMIT:
            diverged = True
            break
        theta = step(theta)
        k += 1
        thetas.append(theta.copy())
        residuals.append(residual_map.inf_norm(theta))
        dists.append(
            float(np.linalg.norm(theta - theta_star)) if theta_star is not None else float("nan")
        )
        if rate_check is not None:
            rate_check(k, theta, theta_star)
    if not diverged and (
        not np.all(np.isfinite(theta)) or float(np.max(np.abs(theta))) > DIVERGENCE_LIMIT
    ):
        diverged = True
    return IterTrace(
        thetas=np.array(thetas),
        residual_inf=np.array(residuals),
        dist_to_fixed_point=np.array(dists),
        converged=bool(residuals[-1] <= tol),
        iterations_used=k,
        diverged=diverged,
        tolerance=tol,
    )


def npvi_run(
    setup: EvaluationSetup,
    n: int,
    theta0=None,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> IterTrace:
    """n-step projected value iteration: Phi theta_{k+1} = Pi T^n(Phi theta_k).

    When gamma^n ||Pi||_inf < 1 the per-iteration contraction bound
    ||Phi theta_k - Phi theta*_n||_inf <= (gamma^n ||Pi||_inf)^k ||Phi theta_0 - ...||
    is verified as the run progresses; a violation aborts, since it would mean
    the iteration is implemented wrong. Divergence for small n is an expected
    outcome and is only flagged in the trace.
    """
    max_iters, tol = _check_iter_params(max_iters, tol)
    system = n_step_system(setup, n)
    gram = weighted_gram(setup)
    phi = setup.features.phi
    cross = (setup.d_beta[:, None] * phi).T @ (system.p_power @ phi)  # Phi^T D P^n Phi
    iter_matrix = np.linalg.solve(gram, (setup.gamma**n) * cross)
    offset = np.linalg.solve(gram, system.b_vector)

    factor = float(setup.gamma**n) * projection(setup).inf_norm
    theta_init = _prepare_theta0(setup, theta0)
    state = {"initial": None}

    def rate_check(k, theta, theta_star):
        if theta_star is None or factor >= 1.0:
            return
        if state["initial"] is None:
            state["initial"] = float(np.max(np.abs(phi @ (theta_init - theta_star))))
        bound = (factor**k) * state["initial"] + RATE_SLACK
        actual = float(np.max(np.abs(phi @ (theta - theta_star))))
        if actual > bound:
            raise NumericalError(
                f"projected value iteration violated its contraction bound at k={k}: "
                f"{actual!r} > {bound!r}"
            )

    return _run_affine_iteration(
        setup,
        n,
        lambda theta: iter_matrix @ theta + offset,
        theta_init,
        max_iters,
        tol,
        rate_check,
    )


def curvature(setup: EvaluationSetup, n: int, kind=ObjectiveKind.PROJECTED) -> CurvatureReport:
    """Hessian Gamma = B_n^T W B_n with strong-convexity and Lipschitz constants."""
    kind = as_objective_kind(kind)
    system = n_step_system(setup, n)
    b_matrix = -system.a_matrix
    gram = weighted_gram(setup)
    if kind is ObjectiveKind.PROJECTED:
        weighted = np.linalg.solve(gram, b_matrix)
        label = "gram_inverse"
    else:
        weighted = gram @ b_matrix
        label = "gram"
    hessian = b_matrix.T @ weighted
    hessian = 0.5 * (hessian + hessian.T)
    eigs = np.linalg.eigvalsh(hessian)
    mu = max(float(eigs[0]), 0.0)
    lip = max(float(eigs[-1]), 0.0)
    step_size = 2.0 / (mu + lip) if (mu + lip) > 0.0 else float("inf")
    return CurvatureReport(
        kind=kind, n=int(n), hessian=hessian, mu=mu, lip=lip, step_size=step_size, weight=label
    )


def objective_value_and_gradient(
    setup: EvaluationSetup, n: int, kind, theta
) -> Tuple[float, np.ndarray]:
    """Evaluate the chosen objective and its exact gradient at theta.

    The gradient is affine: grad f(theta) = Gamma theta - c with Gamma from
    curvature(). Projected kind evaluates the value literally as the weighted
    norm of the projected residual; both kinds share g = B_n theta + b_n.
    """
    kind = as_objective_kind(kind)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (setup.num_features,):
        raise ConfigurationError(
            f"theta has shape {theta.shape}, expected ({setup.num_features},)"
        )
    system = n_step_system(setup, n)
    b_matrix = -system.a_matrix
    g = b_matrix @ theta + system.b_vector
    gram = weighted_gram(setup)
    if kind is ObjectiveKind.PROJECTED:
        proj = projection(setup)
        value_vec = setup.features.phi @ theta
        residual = proj.pi_matrix @ bellman_n(setup, n, value_vec) - value_vec
        value = 0.5 * float(residual @ (setup.d_beta * residual))
        gradient = b_matrix.T @ np.linalg.solve(gram, g)
    else:
        value = 0.5 * float(g @ (gram @ g))
        gradient = b_matrix.T @ (gram @ g)
    return value, gradient


def gradient_descent_run(
    setup: EvaluationSetup,
    n: int,
    kind=ObjectiveKind.PROJECTED,
    theta0=None,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> IterTrace:
    """Constant-step gradient descent with alpha = 2/(mu + lip).

    With mu > 0 the Nesterov strong-convexity rate
    ||theta_k - theta*_n||^2 <= ((lip-mu)/(lip+mu))^{2k} ||theta_0 - theta*_n||^2
    is verified each iteration (a violation aborts: it indicates a bug).
    With mu = 0 the run proceeds without a rate certificate.
    """
    max_iters, tol = _check_iter_params(max_iters, tol)
    kind = as_objective_kind(kind)
    report = curvature(setup, n, kind)
    system = n_step_system(setup, n)
    b_matrix = -system.a_matrix
    gram = weighted_gram(setup)
    if kind is ObjectiveKind.PROJECTED:
        grad_offset = b_matrix.T @ np.linalg.solve(gram, system.b_vector)
    else:
        grad_offset = b_matrix.T @ (gram @ system.b_vector)
    alpha = report.step_size if np.isfinite(report.step_size) else 0.0

    ratio = 0.0
    if report.mu > 0.0:
        ratio = (report.lip - report.mu) / (report.lip + report.mu)
    state = {"initial_sq": None}

    def rate_check(k, theta, theta_star):
        if report.mu <= 0.0 or theta_star is None:
            return
        if state["initial_sq"] is None:
            diff0 = np.asarray(theta_init) - theta_star
            state["initial_sq"] = float(diff0 @ diff0)
        # ratio 0 (lip == mu) means exact convergence after the first step
        bound = (ratio ** (2 * k)) * state["initial_sq"] + RATE_SLACK
        diff = theta - theta_star
        actual = float(diff @ diff)
        if actual > bound:
            raise NumericalError(
                f"gradient descent violated its rate bound at k={k}: {actual!r} > {bound!r}"
            )

    theta_init = _prepare_theta0(setup, theta0)
    return _run_affine_iteration(
        setup,
        n,
        lambda theta: theta - alpha * (report.hessian @ theta + grad_offset),
        theta_init,
        max_iters,
        tol,
        rate_check,
    )


def system_iteration_run(
    setup: EvaluationSetup,
    n: int,
    alpha: float,
    theta0=None,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> IterTrace:
    """Richardson iteration theta <- theta + alpha (B_n theta + b_n).

    Converges to theta*_n exactly when I + alpha B_n is Schur stable; see
    schur_certificate. Divergence is recorded in the trace, not raised.
    """
    max_iters, tol = _check_iter_params(max_iters, tol)
    alpha = float(alpha)
    if alpha <= 0.0:
        raise ConfigurationError(f"alpha must be positive, got {alpha!r}")
    system = n_step_system(setup, n)
    b_matrix = -system.a_matrix
    return _run_affine_iteration(
        setup,
        n,
        lambda theta: theta + alpha * (b_matrix @ theta + system.b_vector),
        theta0,
        max_iters,
        tol,
    )


def schur_certificate(setup: EvaluationSetup, n: int, alpha: float) -> Tuple[float, bool]:
    """Spectral radius of I + alpha B_n and whether it certifies stability.

    stable requires rho < 1 - 1e-12 (strict, with a margin for the eigensolver).
    """
    alpha = float(alpha)
    system = n_step_system(setup, n)
    b_matrix = -system.a_matrix
    matrix = np.eye(setup.num_features) + alpha * b_matrix
    rho = float(np.max(np.abs(np.linalg.eigvals(matrix))))
    return rho, bool(rho < 1.0 - SCHUR_MARGIN)


def find_stable_alpha(
    setup: EvaluationSetup, n: int, max_halvings: int = 60, refine_steps: int = 40
) -> float:
    """Search for a step size with a Schur-stable iteration matrix.

    The eigenvalues lambda_j of B_n give rho(I + alpha B_n) = max_j
    |1 + alpha lambda_j|, so the stable step sizes form an interval
    (0, alpha_crit). The search halves down from the safe cap 2/||B_n||_2
    until stable, bisects upward for the boundary, then returns the scanned
    interior step with the smallest certified spectral radius -- the boundary
    itself has rho ~ 1 and iterates uselessly slowly. Fails when no stable
    step exists in the search range (B_n not Hurwitz at this n).
    """
    system = n_step_system(setup, n)
    b_matrix = -system.a_matrix
    b_norm = float(np.linalg.norm(b_matrix, 2))
    if b_norm == 0.0:
        raise NumericalError("B_n is zero; no step size is meaningful at this n")
    eigs = np.linalg.eigvals(b_matrix)

    def radius(alpha: float) -> float:
        return float(np.max(np.abs(1.0 + alpha * eigs)))

    cap = 2.0 / b_norm
    probe = cap
    for _ in range(max_halvings + 1):
        if radius(probe) < 1.0 - SCHUR_MARGIN:
            break
        probe *= 0.5
    else:
        raise NumericalError(
            f"no Schur-stable step size found in (0, {cap!r}] at n={n}; "
            "B_n appears not to be Hurwitz at this horizon"
        )
    lo, hi = probe, cap
    if radius(cap) < 1.0 - SCHUR_MARGIN:
        lo = cap
    else:
        for _ in range(refine_steps):
            mid = 0.5 * (lo + hi)
            if radius(mid) < 1.0 - SCHUR_MARGIN:
                lo = mid
            else:
                hi = mid
    fractions = np.linspace(1.0 / 64.0, 1.0, 64)
    candidates = sorted((float(f * lo) for f in fractions), key=radius)
    for alpha in candidates:
        if schur_certificate(setup, n, alpha)[1]:
            return alpha
    raise NumericalError(
        f"spectral-radius scan found no certified step size at n={n}"
    )


def auto_horizon(setup: EvaluationSetup) -> int:
    """Smallest horizon covered by both certificates: max(n*, nbar*)."""
    from .operators import hurwitz_horizon

    report = hurwitz_horizon(setup)
    n_bar = report.n_bar_star if report.n_bar_star is not None else report.n_star
    return max(report.n_star, n_bar)
