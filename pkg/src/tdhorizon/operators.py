"""Projection, n-step Bellman operators, horizon certificates, and bounds.

Dense linear algebra over an EvaluationSetup:

  Pi    = Phi (Phi^T D Phi)^{-1} Phi^T D,  the D-weighted projector onto span(Phi)
  T^n x = sum_{k<n} gamma^k P^k R + gamma^n P^n x,  the n-step Bellman operator
  A_n   = Phi^T D (I - gamma^n P^n) Phi,   B_n = -A_n
  n*    = ceil(ln(1/||Pi||_inf) / ln gamma) + 1,  infinity-norm contraction horizon
  nbar* = least n with lambda_max(B_n + B_n^T) < 0,  Hurwitz horizon

plus the projected fixed points theta*_n = A_n^{-1} Phi^T D R_n, the true value
function V = (I - gamma P)^{-1} R, and the approximation error bounds

  ||Phi theta*_n - V||_inf       <= ||Pi V - V||_inf / (1 - gamma^n ||Pi||_inf)
  ||Phi theta*_n - Phi theta*_inf||_inf <= gamma^n ||Pi||_inf times the above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .exceptions import ConfigurationError, NumericalError, RankError, SingularSystemError
from .mdp import EvaluationSetup

COND_LIMIT = 1e12
SINGULAR_RTOL = 1e-12  # smallest/largest singular value ratio for the A_n flag
FIXED_POINT_RESIDUAL_TOL = 1e-8
HORIZON_SNAP_TOL = 1e-10  # treat ||Pi||_inf within this of 1 as exactly 1
ROW_DRIFT_TOL = 1e-9  # allowed row-sum drift of accumulated powers of P_pi
DEFAULT_N_MAX = 10_000


@dataclass(frozen=True)
class ProjectionData:
    """The projector onto span(Phi) in the d_beta-weighted inner product."""

    pi_matrix: np.ndarray
    gram_inverse: np.ndarray
    inf_norm: float

    def __post_init__(self):
        for name in ("pi_matrix", "gram_inverse"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "inf_norm", float(self.inf_norm))


@dataclass(frozen=True)
class HorizonRow:
    """Per-n spectral record of the horizon scan."""

    n: int
    contraction_bound: float  # gamma^n ||Pi||_inf
    sym_part_max_eigenvalue: float  # lambda_max(B_n + B_n^T)
    a_n_nonsingular: bool


@dataclass(frozen=True)
class HorizonReport:
    """Stability certificates: contraction horizon, Hurwitz horizon, per-n data.

    n_bar_star is None when no n <= n_max has a negative-definite symmetric
    part (n_max too small; a finite horizon always exists).
    """

    n_star: int
    n_bar_star: Optional[int]
    pi_inf_norm: float
    per_n: Tuple[HorizonRow, ...]


@dataclass(frozen=True)
class SolutionReport:
    """Fixed point, true solution, and the two error bounds at one horizon n."""

    n: int
    theta_star_n: np.ndarray
    theta_star_inf: np.ndarray
    v_pi: np.ndarray
    bound_value: float  # bound on ||Phi theta*_n - V||_inf
    bound_gap: float  # bound on ||Phi theta*_n - Phi theta*_inf||_inf
    actual_value_error: float
    actual_gap: float

    def __post_init__(self):
        for name in ("theta_star_n", "theta_star_inf", "v_pi"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


class NStepSystem(NamedTuple):
    """The affine data of the n-step projected equation A_n theta = b_n."""

    a_matrix: np.ndarray  # Phi^T D (I - gamma^n P^n) Phi
    b_vector: np.ndarray  # Phi^T D R_n
    p_power: np.ndarray  # P^n
    reward_n: np.ndarray  # R_n = sum_{k<n} gamma^k P^k R


def _check_n(n, minimum: int = 1) -> int:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise ConfigurationError(f"n must be an integer, got {n!r}")
    if n < minimum:
        raise ConfigurationError(f"n must be >= {minimum}, got {n}")
    return int(n)


def weighted_gram(setup: EvaluationSetup) -> np.ndarray:
    """Gram matrix Phi^T D Phi with a conditioning guard."""
    phi = setup.features.phi
    gram = phi.T @ (setup.d_beta[:, None] * phi)
    gram = 0.5 * (gram + gram.T)
    cond = float(np.linalg.cond(gram))
    if not math.isfinite(cond) or cond > COND_LIMIT:
        raise RankError(
            f"Gram matrix Phi^T D Phi is numerically singular (condition {cond!r} "
            f"exceeds {COND_LIMIT:g})"
        )
    return gram


def projection(setup: EvaluationSetup) -> ProjectionData:
    """Weighted least-squares projector Pi = Phi (Phi^T D Phi)^{-1} Phi^T D."""
    phi = setup.features.phi
    gram = weighted_gram(setup)
    gram_inverse = np.linalg.inv(gram)
    pi_matrix = (phi @ gram_inverse @ phi.T) * setup.d_beta[None, :]
    inf_norm = float(np.max(np.abs(pi_matrix).sum(axis=1)))
    return ProjectionData(pi_matrix=pi_matrix, gram_inverse=gram_inverse, inf_norm=inf_norm)


def bellman_n(setup: EvaluationSetup, n: int, x: np.ndarray) -> np.ndarray:
    """Apply the n-step Bellman operator T^n to x.

    Computed as n applications of the one-step affine map x <- R + gamma P x;
    no matrix power is formed. Accepts a vector of shape (|S|,) or a stack of
    column vectors of shape (|S|, k).
    """
    n = _check_n(n)
    kernel = setup.kernel_target
    x = np.asarray(x, dtype=np.float64)
    vector_input = x.ndim == 1
    if vector_input:
        if x.shape != (setup.num_states,):
            raise ConfigurationError(f"x has shape {x.shape}, expected ({setup.num_states},)")
        y = x[:, None].copy()
    else:
        if x.ndim != 2 or x.shape[0] != setup.num_states:
            raise ConfigurationError(
                f"x has shape {x.shape}, expected ({setup.num_states},) or ({setup.num_states}, k)"
            )
        y = x.copy()
    r = kernel.r_pi[:, None]
    for _ in range(n):
        y = r + setup.gamma * (kernel.p_pi @ y)
    return y[:, 0] if vector_input else y


def n_step_system(setup: EvaluationSetup, n: int) -> NStepSystem:
    """Assemble A_n, b_n, P^n, and R_n by cumulative products with drift checks."""
    n = _check_n(n)
    kernel = setup.kernel_target
    num_states = setup.num_states
    p = kernel.p_pi
    p_power = np.eye(num_states)
    reward_n = np.zeros(num_states)
    term = kernel.r_pi.copy()  # P^k R
    for k in range(n):
        reward_n += (setup.gamma**k) * term
        term = p @ term
        p_power = p_power @ p
        drift = float(np.max(np.abs(p_power.sum(axis=1) - 1.0)))
        if drift > ROW_DRIFT_TOL:
            raise NumericalError(
                f"row sums of P^{k + 1} drifted by {drift!r} (> {ROW_DRIFT_TOL}); "
                "accumulated power is unreliable"
            )
    phi = setup.features.phi
    weighted = setup.d_beta[:, None] * phi  # D Phi
    a_matrix = phi.T @ (setup.d_beta[:, None] * (phi - (setup.gamma**n) * (p_power @ phi)))
    b_vector = weighted.T @ reward_n
    return NStepSystem(a_matrix=a_matrix, b_vector=b_vector, p_power=p_power, reward_n=reward_n)


def contraction_horizon(setup: EvaluationSetup) -> int:
    """Smallest horizon certified by the formula n* = ceil(ln(1/||Pi||)/ln gamma) + 1.

    Returns 1 when ||Pi||_inf <= 1 (the operator already contracts at every n).
    The formula is sufficient, not necessary: Pi T^n may contract for some
    n < n* as well.
    """
    pin = projection(setup).inf_norm
    if abs(pin - 1.0) <= HORIZON_SNAP_TOL:
        pin = 1.0
    if pin < 1.0:
        return 1
    ratio = math.log(1.0 / pin) / math.log(setup.gamma)
    return max(1, math.ceil(ratio) + 1)


def hurwitz_horizon(setup: EvaluationSetup, n_max: int = DEFAULT_N_MAX) -> HorizonReport:
    """Scan n = 1, 2, ... for the Hurwitz horizon of B_n = Phi^T D (gamma^n P^n - I) Phi.

    nbar* is the first n whose symmetric part B_n + B_n^T is negative definite
    (its largest eigenvalue is < 0). The scan records per-n spectral data at
    least up to min(n*, n_max) and stops once both horizons are covered.
    """
    n_max = _check_n(n_max)
    proj = projection(setup)
    pin = proj.inf_norm
    n_star = contraction_horizon(setup)
    phi = setup.features.phi
    dphi = setup.d_beta[:, None] * phi
    gram = phi.T @ dphi
    p = setup.kernel_target.p_pi
    num_states = setup.num_states

    rows = []
    n_bar_star: Optional[int] = None
    scan_floor = min(n_star, n_max)
    p_power = np.eye(num_states)
    for n in range(1, n_max + 1):
        p_power = p_power @ p
        drift = float(np.max(np.abs(p_power.sum(axis=1) - 1.0)))
        if drift > ROW_DRIFT_TOL:
            raise NumericalError(
                f"row sums of P^{n} drifted by {drift!r} (> {ROW_DRIFT_TOL})"
            )
        b_n = (setup.gamma**n) * (dphi.T @ (p_power @ phi)) - gram
        sym_max = float(np.linalg.eigvalsh(b_n + b_n.T)[-1])
        sv = np.linalg.svd(b_n, compute_uv=False)  # A_n = -B_n has the same singular values
        nonsingular = bool(sv[0] > 0.0 and sv[-1] > SINGULAR_RTOL * sv[0])
        rows.append(
            HorizonRow(
                n=n,
                contraction_bound=float(setup.gamma**n) * pin,
                sym_part_max_eigenvalue=sym_max,
                a_n_nonsingular=nonsingular,
            )
        )
        if n_bar_star is None and sym_max < 0.0:
            n_bar_star = n
        if n_bar_star is not None and n >= scan_floor:
            break
    return HorizonReport(
        n_star=n_star, n_bar_star=n_bar_star, pi_inf_norm=pin, per_n=tuple(rows)
    )


def fixed_point(setup: EvaluationSetup, n: int) -> np.ndarray:
    """Solve the n-step projected Bellman equation: theta*_n = A_n^{-1} Phi^T D R_n.

    Refuses (rather than regularizes) when A_n is numerically singular, and
    verifies the fixed-point residual ||Phi theta - Pi T^n(Phi theta)||_inf.
    """
    n = _check_n(n)
    system = n_step_system(setup, n)
    cond = float(np.linalg.cond(system.a_matrix))
    if not math.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystemError(
            f"A_n is numerically singular at n={n} (condition {cond!r}); "
            "no unique fixed point at this n"
        )
    theta = np.linalg.solve(system.a_matrix, system.b_vector)
    proj = projection(setup)
    value = setup.features.phi @ theta
    residual = float(np.max(np.abs(value - proj.pi_matrix @ bellman_n(setup, n, value))))
    if residual > FIXED_POINT_RESIDUAL_TOL:
        raise NumericalError(
            f"fixed-point residual {residual!r} exceeds {FIXED_POINT_RESIDUAL_TOL} at n={n}; "
            "the solve is too ill-conditioned to trust"
        )
    return theta


def true_solution(setup: EvaluationSetup) -> Tuple[np.ndarray, np.ndarray]:
    """True value function and its best representable weights.

    V = (I - gamma P)^{-1} R;  theta*_inf solves the weighted least squares
    Phi theta ~ V, so Phi theta*_inf = Pi V.
    """
    kernel = setup.kernel_target
    num_states = setup.num_states
    v_pi = np.linalg.solve(np.eye(num_states) - setup.gamma * kernel.p_pi, kernel.r_pi)
    gram = weighted_gram(setup)
    rhs = setup.features.phi.T @ (setup.d_beta * v_pi)
    theta_inf = np.linalg.solve(gram, rhs)
    return v_pi, theta_inf


def error_bounds(setup: EvaluationSetup, n: int) -> SolutionReport:
    """Evaluate the two approximation error bounds at horizon n >= n*."""
    n = _check_n(n)
    n_star = contraction_horizon(setup)
    if n < n_star:
        raise ConfigurationError(
            f"error bounds require n >= n* = {n_star} (so the shrink factor is < 1), got n={n}"
        )
    proj = projection(setup)
    v_pi, theta_inf = true_solution(setup)
    phi = setup.features.phi
    approx = float(np.max(np.abs(proj.pi_matrix @ v_pi - v_pi)))
    shrink = float(setup.gamma**n) * proj.inf_norm
    bound_value = approx / (1.0 - shrink)
    bound_gap = shrink * bound_value
    theta_n = fixed_point(setup, n)
    actual_value_error = float(np.max(np.abs(phi @ theta_n - v_pi)))
    actual_gap = float(np.max(np.abs(phi @ (theta_n - theta_inf))))
    slack = 1e-9 * max(1.0, bound_value) + 1e-12
    if actual_value_error > bound_value + slack or actual_gap > bound_gap + slack:
        raise NumericalError(
            f"error bound violated at n={n}: value {actual_value_error!r} vs {bound_value!r}, "
            f"gap {actual_gap!r} vs {bound_gap!r}"
        )
    return SolutionReport(
        n=n,
        theta_star_n=theta_n,
        theta_star_inf=theta_inf,
        v_pi=v_pi,
        bound_value=bound_value,
        bound_gap=bound_gap,
        actual_value_error=actual_value_error,
        actual_gap=actual_gap,
    )
