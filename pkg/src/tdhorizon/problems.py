"""Problem definitions: builtin instances, a JSON schema, and generators.

A problem is a plain dict with keys

  num_states, num_actions : int
  transition              : (S, A, S) nested lists, rows sum to 1
  reward                  : (S, A, S) nested lists
  gamma                   : float in (0, 1)
  pi, beta                : (S, A) nested lists, rows sum to 1
  d_beta                  : optional (S,) positive, sums to 1; computed as
                            the stationary distribution of beta when absent
  name, description       : optional strings

Row sums are accepted within 1e-9 and then renormalized exactly so the
constructed types see rows summing to 1 within 1e-12. The content hash is
the sha256 of the canonical JSON of the fully resolved problem (sorted keys,
resolved d_beta included) together with the tool version.
"""

from __future__ import annotations

import hashlib
import json
import os
import urllib.parse
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .exceptions import ConfigurationError, RankError
from .mdp import EvaluationSetup, FeatureMap, FiniteMdp, Policy, build_setup
from .version import __version__

BUILTIN_NAMES = ("twostate", "baird-star")
ROW_ACCEPT_TOL = 1e-9
ROW_EXACT_TOL = 1e-12
RANDOM_PREFIX = "random-k"

_REQUIRED_KEYS = ("num_states", "num_actions", "transition", "reward", "gamma", "pi", "beta")
_OPTIONAL_KEYS = ("d_beta", "phi", "name", "description")
# phi is required too; kept separate above only for the error message order
_ALL_KEYS = set(_REQUIRED_KEYS) | set(_OPTIONAL_KEYS)


@dataclass(frozen=True)
class ProblemSpec:
    """A validated problem plus its canonical form and content hash."""

    name: str
    source: str
    resolved: Dict
    content_hash: str
    setup: EvaluationSetup

    def to_setup(self) -> EvaluationSetup:
        return self.setup


def _require_int(problem: Dict, key: str) -> int:
    value = problem[key]
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigurationError(f"problem field '{key}' must be a positive integer, got {value!r}")
    return value


def _as_array(problem: Dict, key: str, shape, kind: str = "float") -> np.ndarray:
    try:
        arr = np.array(problem[key], dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigurationError(f"problem field '{key}' is not a numeric array")
    if arr.shape != shape:
        raise ConfigurationError(
            f"problem field '{key}' has shape {arr.shape}, expected {shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"problem field '{key}' contains nonfinite entries")
    return arr


def _normalize_rows(arr: np.ndarray, key: str) -> np.ndarray:
    """Validate distribution rows at the loader tolerance, then renormalize
    exactly. Trailing axis is the distribution axis."""
    if np.any(arr < 0.0):
        idx = tuple(int(i) for i in np.argwhere(arr < 0.0)[0])
        raise ConfigurationError(f"problem field '{key}' has a negative entry at {idx}")
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0) > ROW_ACCEPT_TOL
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ConfigurationError(
            f"problem field '{key}' row {idx} sums to {sums[idx]!r}, expected 1 "
            f"within {ROW_ACCEPT_TOL}"
        )
    drift = np.abs(sums - 1.0) > ROW_EXACT_TOL
    if np.any(drift):
        arr = arr / sums[..., None]
    return arr


def problem_from_dict(problem: Dict, source: str = "dict") -> ProblemSpec:
    """Validate a problem dict and build its evaluation setup.

    Diagnostics name the offending field and index. Unknown keys are
    rejected so that typos do not silently fall back to defaults.
    """
    if not isinstance(problem, dict):
        raise ConfigurationError(f"problem must be a dict, got {type(problem).__name__}")
    unknown = sorted(set(problem) - _ALL_KEYS)
    if unknown:
        raise ConfigurationError(f"problem has unknown fields: {', '.join(unknown)}")
    missing = [k for k in (*_REQUIRED_KEYS, "phi") if k not in problem]
    if missing:
        raise ConfigurationError(f"problem is missing required fields: {', '.join(missing)}")

    num_states = _require_int(problem, "num_states")
    num_actions = _require_int(problem, "num_actions")
    transition = _normalize_rows(
        _as_array(problem, "transition", (num_states, num_actions, num_states)), "transition"
    )
    reward = _as_array(problem, "reward", (num_states, num_actions, num_states))
    gamma = problem["gamma"]
    if not isinstance(gamma, (int, float)) or isinstance(gamma, bool):
        raise ConfigurationError(f"problem field 'gamma' must be a number, got {gamma!r}")
    pi = _normalize_rows(_as_array(problem, "pi", (num_states, num_actions)), "pi")
    beta = _normalize_rows(_as_array(problem, "beta", (num_states, num_actions)), "beta")
    phi_raw = problem["phi"]
    try:
        phi_arr = np.array(phi_raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigurationError("problem field 'phi' is not a numeric array")
    if phi_arr.ndim != 2 or phi_arr.shape[0] != num_states:
        raise ConfigurationError(
            f"problem field 'phi' has shape {phi_arr.shape}, expected ({num_states}, m)"
        )

    d_beta = None
    if problem.get("d_beta") is not None:
        d_beta = _as_array(problem, "d_beta", (num_states,))

    name = problem.get("name")
    if name is not None and not isinstance(name, str):
        raise ConfigurationError(f"problem field 'name' must be a string, got {name!r}")
    description = problem.get("description")
    if description is not None and not isinstance(description, str):
        raise ConfigurationError("problem field 'description' must be a string")

    mdp = FiniteMdp(
        num_states=num_states,
        num_actions=num_actions,
        transition=transition,
        reward=reward,
        gamma=float(gamma),
    )
    try:
        features = FeatureMap(phi_arr)
    except RankError as exc:
        raise RankError(f"problem field 'phi': {exc}")
    setup = build_setup(mdp, Policy(pi), Policy(beta), features, d_beta_override=d_beta)

    resolved = {
        "num_states": num_states,
        "num_actions": num_actions,
        "transition": setup.base_mdp.transition.tolist(),
        "reward": setup.base_mdp.reward.tolist(),
        "gamma": float(gamma),
        "pi": setup.target_policy.probs.tolist(),
        "beta": setup.behavior_policy.probs.tolist(),
        "phi": setup.features.phi.tolist(),
        "d_beta": setup.d_beta.tolist(),
        "name": name,
        "description": description,
    }
    content_hash = hash_problem(resolved)
    return ProblemSpec(
        name=name if name is not None else "unnamed",
        source=source,
        resolved=resolved,
        content_hash=content_hash,
        setup=setup,
    )


def hash_problem(resolved: Dict) -> str:
    payload = {"problem": resolved, "tool_version": __version__}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def twostate_problem() -> Dict:
    """Two states, two actions, zero rewards, one feature per state.

    Action 0 moves to state 0, action 1 to state 1, from anywhere. The
    target policy always takes action 1; the behavior policy is uniform, so
    its stationary distribution is (1/2, 1/2). Features are phi(s0) = 1,
    phi(s1) = 2, which makes the projection expansive (inf norm 1.2) and
    the one-step bootstrapped system unstable despite on-policy-style
    contraction holding at large n.
    """
    go0 = [1.0, 0.0]
    go1 = [0.0, 1.0]
    zero = [0.0, 0.0]
    return {
        "name": "twostate",
        "num_states": 2,
        "num_actions": 2,
        "transition": [[go0, go1], [go0, go1]],
        "reward": [[zero, zero], [zero, zero]],
        "gamma": 0.99,
        "pi": [[0.0, 1.0], [0.0, 1.0]],
        "beta": [[0.5, 0.5], [0.5, 0.5]],
        "phi": [[1.0], [2.0]],
    }


def star_problem() -> Dict:
    """Star-shaped counterexample: six outer states and a center.

    Action 0 ("dashed") jumps uniformly to the outer states, action 1
    ("solid") jumps to the center. The target policy is all-solid, the
    behavior policy mostly dashed (6/7 vs 1/7), all rewards are zero, so
    the true value function is identically zero. Features alias the center
    with the first outer state (phi(center) = 2 phi(outer0)), the classic
    recipe for off-policy bootstrapped divergence at small n.

    The feature map is a six-column full-rank reduction of the usual
    redundant parameterization, keeping the per-state indicator columns for
    outer states 1..5 and the shared column (1 on outer states, 2 on the
    center) that carries the aliasing.
    """
    num_outer = 6
    num_states = num_outer + 1
    center = num_outer
    dashed = [1.0 / num_outer] * num_outer + [0.0]
    solid = [0.0] * num_outer + [1.0]
    zero = [0.0] * num_states
    phi = []
    for s in range(num_outer):
        row = [0.0] * 6
        if s >= 1:
            row[s - 1] = 2.0
        row[5] = 1.0
        phi.append(row)
    phi.append([0.0] * 5 + [2.0])  # center aliases outer state 0
    return {
        "name": "baird-star",
        "num_states": num_states,
        "num_actions": 2,
        "transition": [[dashed, solid] for _ in range(num_states)],
        "reward": [[zero, zero] for _ in range(num_states)],
        "gamma": 0.99,
        "pi": [[0.0, 1.0] for _ in range(num_states)],
        "beta": [[6.0 / 7.0, 1.0 / 7.0] for _ in range(num_states)],
        "phi": phi,
        "d_beta": [1.0 / num_states] * num_states,
    }


def random_problem(
    num_states: int, num_actions: int, num_features: int, seed: int, gamma: float = 0.9
) -> Dict:
    """Generate a dense random problem from a Philox stream.

    Draw order is fixed (transition, reward, pi, beta, then phi) so a seed
    pins the instance. Probability tables are uniform draws shifted by 0.1
    before row normalization, which keeps every entry positive and the
    behavior chain irreducible. Feature columns are standard normal draws
    scaled to unit length; the rare rank-deficient draw is retried.
    """
    for name, value in (
        ("num_states", num_states),
        ("num_actions", num_actions),
        ("num_features", num_features),
    ):
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    if num_features > num_states:
        raise ConfigurationError(
            f"num_features={num_features} must not exceed num_states={num_states}"
        )
    rng = np.random.Generator(np.random.Philox(int(seed)))
    transition = rng.random((num_states, num_actions, num_states)) + 0.1
    transition /= transition.sum(axis=-1, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, (num_states, num_actions, num_states))
    pi = rng.random((num_states, num_actions)) + 0.1
    pi /= pi.sum(axis=-1, keepdims=True)
    beta = rng.random((num_states, num_actions)) + 0.1
    beta /= beta.sum(axis=-1, keepdims=True)
    for _ in range(100):
        phi = rng.standard_normal((num_states, num_features))
        phi /= np.linalg.norm(phi, axis=0, keepdims=True)
        try:
            FeatureMap(phi)
            break
        except RankError:
            continue
    else:
        raise ConfigurationError("could not draw a full-rank feature matrix in 100 tries")
    return {
        "name": f"{RANDOM_PREFIX}?states={num_states}&actions={num_actions}"
        f"&features={num_features}&seed={int(seed)}&gamma={float(gamma)!r}",
        "num_states": int(num_states),
        "num_actions": int(num_actions),
        "transition": transition.tolist(),
        "reward": reward.tolist(),
        "gamma": float(gamma),
        "pi": pi.tolist(),
        "beta": beta.tolist(),
        "phi": phi.tolist(),
    }


def _parse_random_token(token: str) -> Dict:
    query = token[len(RANDOM_PREFIX) :]
    if query.startswith("?"):
        query = query[1:]
    params = dict(urllib.parse.parse_qsl(query, keep_blank_values=True))
    required = ("states", "actions", "features", "seed")
    missing = [k for k in required if k not in params]
    if missing:
        raise ConfigurationError(
            f"random problem token is missing parameters: {', '.join(missing)}; "
            f"expected {RANDOM_PREFIX}?states=..&actions=..&features=..&seed=..[&gamma=..]"
        )
    unknown = sorted(set(params) - set(required) - {"gamma"})
    if unknown:
        raise ConfigurationError(f"random problem token has unknown parameters: {', '.join(unknown)}")
    try:
        states = int(params["states"])
        actions = int(params["actions"])
        features = int(params["features"])
        seed = int(params["seed"])
        gamma = float(params.get("gamma", 0.9))
    except ValueError as exc:
        raise ConfigurationError(f"random problem token has a malformed parameter: {exc}")
    return random_problem(states, actions, features, seed, gamma)


def builtin_problem(name: str) -> Dict:
    if name == "twostate":
        return twostate_problem()
    if name == "baird-star":
        return star_problem()
    raise ConfigurationError(
        f"unknown builtin problem {name!r}; available: {', '.join(BUILTIN_NAMES)}"
    )


def load_problem(source) -> ProblemSpec:
    """Resolve a problem from a dict, a builtin name, a random-k token, or
    a JSON file path."""
    if isinstance(source, dict):
        return problem_from_dict(source, source="dict")
    if isinstance(source, os.PathLike):
        source = os.fspath(source)
    if not isinstance(source, str):
        raise ConfigurationError(
            f"problem source must be a dict, builtin name, or path, got {type(source).__name__}"
        )
    if source in BUILTIN_NAMES:
        return problem_from_dict(builtin_problem(source), source=f"builtin:{source}")
    if source.startswith(RANDOM_PREFIX) and (
        source == RANDOM_PREFIX or source[len(RANDOM_PREFIX)] in "?&"
    ):
        return problem_from_dict(_parse_random_token(source), source=source)
    if not os.path.exists(source):
        raise ConfigurationError(
            f"problem source {source!r} is neither a builtin name "
            f"({', '.join(BUILTIN_NAMES)}), a {RANDOM_PREFIX} token, nor an existing file"
        )
    try:
        with open(source, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"problem file {source!r} is not valid JSON: {exc.msg} "
            f"(line {exc.lineno}, column {exc.colno})"
        )
    except OSError as exc:
        raise ConfigurationError(f"problem file {source!r} could not be read: {exc}")
    spec = problem_from_dict(data, source=f"file:{source}")
    if spec.name == "unnamed":
        stem = os.path.splitext(os.path.basename(source))[0]
        return ProblemSpec(
            name=stem,
            source=spec.source,
            resolved=spec.resolved,
            content_hash=spec.content_hash,
            setup=spec.setup,
        )
    return spec
