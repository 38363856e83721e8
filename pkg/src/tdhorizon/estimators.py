"""Estimator-style wrappers around the solvers.

Each estimator takes an evaluation setup in fit(), stores the fitted weight
vector as coef_, and predicts state values. X in fit() is the setup (or
anything load_problem accepts); X in predict() is an array of state indices,
or None for all states. Horizons left as None are chosen from the setup's
own certificates: the contraction horizon for the contraction-based methods,
and the larger of the contraction and negative-definiteness horizons for
the methods that need the bootstrapped system itself to be stable.

The hyperparameter surface follows the scikit-learn convention (constructor
arguments stored verbatim, get_params/set_params, trailing-underscore
fitted attributes), so the estimators work with clone() and grid search.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConfigurationError
from .mdp import EvaluationSetup
from .operators import contraction_horizon, fixed_point, hurwitz_horizon, true_solution
from .problems import ProblemSpec, load_problem
from .sampling import DEFAULT_SCHEDULE, run_stochastic
from .solvers import (
    ObjectiveKind,
    as_objective_kind,
    curvature,
    find_stable_alpha,
    gradient_descent_run,
    npvi_run,
    schur_certificate,
    system_iteration_run,
)


def check_evaluation_setup(X) -> EvaluationSetup:
    """Coerce fit() input to an EvaluationSetup.

    Accepts an EvaluationSetup, a ProblemSpec, or anything load_problem
    handles (builtin name, random-k token, file path, problem dict).
    """
    if isinstance(X, EvaluationSetup):
        return X
    if isinstance(X, ProblemSpec):
        return X.setup
    if isinstance(X, (str, dict)) or hasattr(X, "__fspath__"):
        return load_problem(X).setup
    raise ConfigurationError(
        f"expected an EvaluationSetup, ProblemSpec, problem dict, or problem "
        f"source string, got {type(X).__name__}"
    )


def check_state_indices(X, num_states: int) -> np.ndarray:
    indices = np.asarray(X)
    if indices.ndim != 1:
        raise ConfigurationError(f"state indices must be one-dimensional, got shape {indices.shape}")
    if indices.size and not np.issubdtype(indices.dtype, np.integer):
        if not np.all(indices == np.floor(indices)):
            raise ConfigurationError("state indices must be integers")
        indices = indices.astype(np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= num_states):
        raise ConfigurationError(
            f"state indices must lie in [0, {num_states}), got range "
            f"[{indices.min()}, {indices.max()}]"
        )
    return indices.astype(np.int64)


class _ValueEstimator(BaseEstimator):
    """Shared predict/horizon logic. Subclasses set coef_, n_, setup_ in fit."""

    _needs_hurwitz = False

    def _resolve_n(self, setup: EvaluationSetup, n) -> int:
        if n is not None:
            if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
                raise ConfigurationError(f"n must be a positive integer, got {n!r}")
            return int(n)
        if self._needs_hurwitz:
            report = hurwitz_horizon(setup)
            n_bar = report.n_bar_star if report.n_bar_star is not None else report.n_star
            return max(report.n_star, n_bar)
        return contraction_horizon(setup)

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise ConfigurationError("estimator is not fitted; call fit first")

    def predict(self, X=None) -> np.ndarray:
        """Predicted values Phi theta, for all states or for given indices."""
        self._check_fitted()
        phi = self.setup_.features.phi
        if X is None:
            return phi @ self.coef_
        indices = check_state_indices(X, self.setup_.num_states)
        return phi[indices] @ self.coef_


class DirectFixedPoint(_ValueEstimator):
    """Solve the projected multi-step fixed point directly.

    Fitted attributes: coef_ (the fixed point), n_, value_ (Phi coef_),
    true_values_ and best_coef_ (the unprojected solution and the weighted
    regression of it onto the features, for reference).
    """

    def __init__(self, n: Optional[int] = None):
        self.n = n

    def fit(self, X, y=None):
        setup = check_evaluation_setup(X)
        self.setup_ = setup
        self.n_ = self._resolve_n(setup, self.n)
        self.coef_ = fixed_point(setup, self.n_)
        self.value_ = setup.features.phi @ self.coef_
        self.true_values_, self.best_coef_ = true_solution(setup)
        return self


class ProjectedValueIteration(_ValueEstimator):
    """Iterate the projected multi-step backup to its fixed point."""

    def __init__(
        self,
        n: Optional[int] = None,
        theta0=None,
        max_iters: int = 100_000,
        tol: float = 1e-10,
    ):
        self.n = n
        self.theta0 = theta0
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y=None):
        setup = check_evaluation_setup(X)
        self.setup_ = setup
        self.n_ = self._resolve_n(setup, self.n)
        self.trace_ = npvi_run(
            setup, self.n_, theta0=self.theta0, max_iters=self.max_iters, tol=self.tol
        )
        self.coef_ = self.trace_.final_theta
        self.converged_ = self.trace_.converged
        return self


class ObjectiveGradientDescent(_ValueEstimator):
    """Gradient descent on one of the two quadratic objectives, with the
    curvature-optimal constant step."""

    def __init__(
        self,
        n: Optional[int] = None,
        kind=ObjectiveKind.PROJECTED,
        theta0=None,
        max_iters: int = 100_000,
        tol: float = 1e-10,
    ):
        self.n = n
        self.kind = kind
        self.theta0 = theta0
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y=None):
        setup = check_evaluation_setup(X)
        self.setup_ = setup
        self.n_ = self._resolve_n(setup, self.n)
        kind = as_objective_kind(self.kind)
        self.curvature_ = curvature(setup, self.n_, kind)
        self.trace_ = gradient_descent_run(
            setup, self.n_, kind=kind, theta0=self.theta0, max_iters=self.max_iters, tol=self.tol
        )
        self.coef_ = self.trace_.final_theta
        self.converged_ = self.trace_.converged
        return self


class RichardsonIteration(_ValueEstimator):
    """Fixed-step iteration along the expected TD update, with a certified
    step size found by bisection when none is given."""

    _needs_hurwitz = True

    def __init__(
        self,
        n: Optional[int] = None,
        alpha: Optional[float] = None,
        theta0=None,
        max_iters: int = 100_000,
        tol: float = 1e-10,
    ):
        self.n = n
        self.alpha = alpha
        self.theta0 = theta0
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y=None):
        setup = check_evaluation_setup(X)
        self.setup_ = setup
        self.n_ = self._resolve_n(setup, self.n)
        alpha = self.alpha if self.alpha is not None else find_stable_alpha(setup, self.n_)
        self.alpha_ = float(alpha)
        self.spectral_radius_, self.stable_ = schur_certificate(setup, self.n_, self.alpha_)
        self.trace_ = system_iteration_run(
            setup, self.n_, self.alpha_, theta0=self.theta0, max_iters=self.max_iters, tol=self.tol
        )
        self.coef_ = self.trace_.final_theta
        self.converged_ = self.trace_.converged
        return self


class MultiStepTD(_ValueEstimator):
    """Sampled n-step TD with importance weighting."""

    _needs_hurwitz = True

    def __init__(
        self,
        n: Optional[int] = None,
        schedule=DEFAULT_SCHEDULE,
        iters: int = 100_000,
        seed: int = 0,
        log_every: int = 1000,
        theta0=None,
    ):
        self.n = n
        self.schedule = schedule
        self.iters = iters
        self.seed = seed
        self.log_every = log_every
        self.theta0 = theta0

    def fit(self, X, y=None):
        setup = check_evaluation_setup(X)
        self.setup_ = setup
        self.n_ = self._resolve_n(setup, self.n)
        self.trace_ = run_stochastic(
            setup,
            self.n_,
            "ntd",
            schedule=self.schedule,
            iters=self.iters,
            seed=self.seed,
            log_every=self.log_every,
            theta0=self.theta0,
        )
        self.coef_ = self.trace_.final_theta
        self.diverged_ = self.trace_.diverged
        return self


class MultiStepGradientTD(_ValueEstimator):
    """Sampled n-step gradient (saddle point) TD with importance weighting."""

    _needs_hurwitz = True

    def __init__(
        self,
        n: Optional[int] = None,
        schedule=DEFAULT_SCHEDULE,
        iters: int = 100_000,
        seed: int = 0,
        log_every: int = 1000,
        theta0=None,
        lambda0=None,
    ):
        self.n = n
        self.schedule = schedule
        self.iters = iters
        self.seed = seed
        self.log_every = log_every
        self.theta0 = theta0
        self.lambda0 = lambda0

    def fit(self, X, y=None):
        setup = check_evaluation_setup(X)
        self.setup_ = setup
        self.n_ = self._resolve_n(setup, self.n)
        self.trace_ = run_stochastic(
            setup,
            self.n_,
            "ngtd",
            schedule=self.schedule,
            iters=self.iters,
            seed=self.seed,
            log_every=self.log_every,
            theta0=self.theta0,
            lambda0=self.lambda0,
        )
        self.coef_ = self.trace_.final_theta
        self.dual_coef_ = self.trace_.final_lambda
        self.diverged_ = self.trace_.diverged
        return self
