"""Tabular two-agent MDPs and exact discounted-occupancy linear algebra.

Conventions shared by every consumer of this module:
  * the geometric future-offset variable has support k in {1, 2, ...} with
    P(K=k) = (1-gamma) * gamma**(k-1); the action taken at time t causally
    precedes the sampled future state,
  * probabilities are kept in linear space; logs appear only inside
    KL/MI computations with 0*log(0) := 0,
  * dense LU solves only, rejected above MAX_DENSE_STATES states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError

PROB_ATOL = 1e-9
MAX_DENSE_STATES = 4096


def _check_rows_stochastic(arr: np.ndarray, name: str) -> None:
    if np.any(arr < -PROB_ATOL):
        raise ConfigurationError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=PROB_ATOL, rtol=0.0):
        worst = float(np.abs(sums - 1.0).max())
        raise ConfigurationError(f"{name} rows must sum to 1 (worst deviation {worst:.3e})")


@dataclass(frozen=True)
class TabularMDP:
    """Joint human/robot MDP with enumerable states.

    transition has shape (S, AH, AR, S) with transition[s, ah, ar, s'] the
    probability of moving to s'; initial_dist is a length-S probability vector.
    """

    transition: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=float)
        p0 = np.asarray(self.initial_dist, dtype=float)
        if t.ndim != 4 or t.shape[0] != t.shape[3]:
            raise ConfigurationError(f"transition must have shape (S, AH, AR, S); got {t.shape}")
        if t.shape[0] > MAX_DENSE_STATES:
            raise ConfigurationError(
                f"{t.shape[0]} states exceeds the dense-solve bound of {MAX_DENSE_STATES}"
            )
        if p0.shape != (t.shape[0],):
            raise ConfigurationError("initial_dist length must equal num_states")
        _check_rows_stochastic(t, "transition")
        _check_rows_stochastic(p0[None, :], "initial_dist")
        t.setflags(write=False)
        p0.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "initial_dist", p0)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_human_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_robot_actions(self) -> int:
        return self.transition.shape[2]

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_states": self.num_states,
                "num_human_actions": self.num_human_actions,
                "num_robot_actions": self.num_robot_actions,
                "transition": self.transition.tolist(),
                "initial_dist": self.initial_dist.tolist(),
            }
        )

    @classmethod
    def from_json(cls, payload: str) -> "TabularMDP":
        obj = json.loads(payload)
        for key in ("num_states", "num_human_actions", "num_robot_actions", "transition", "initial_dist"):
            if key not in obj:
                raise ConfigurationError(f"missing field {key!r} in TabularMDP JSON")
        t = np.asarray(obj["transition"], dtype=float)
        expected = (
            obj["num_states"],
            obj["num_human_actions"],
            obj["num_robot_actions"],
            obj["num_states"],
        )
        if t.shape != expected:
            raise ConfigurationError(f"transition shape {t.shape} does not match header {expected}")
        return cls(transition=t, initial_dist=np.asarray(obj["initial_dist"], dtype=float))


@dataclass(frozen=True)
class Policy:
    """Stationary stochastic policy: probs[s, a] = P(a | s)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise ConfigurationError("policy probs must be a (states x actions) matrix")
        _check_rows_stochastic(p, "policy")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))


@dataclass(frozen=True)
class DiscountSpec:
    """gamma_future drives the geometric future-state variable; gamma_rl is the
    assistant's RL discount (a distinct knob, 0 gives the greedy ablation)."""

    gamma_future: float
    gamma_rl: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.gamma_future < 1.0):
            raise ConfigurationError("gamma_future must lie in (0, 1)")
        if not (0.0 <= self.gamma_rl < 1.0):
            raise ConfigurationError("gamma_rl must lie in [0, 1)")


def _check_policies(mdp: TabularMDP, pi_h: Policy, pi_r: Policy) -> None:
    if pi_h.probs.shape != (mdp.num_states, mdp.num_human_actions):
        raise ConfigurationError(
            f"human policy shape {pi_h.probs.shape} does not match MDP "
            f"({mdp.num_states}, {mdp.num_human_actions})"
        )
    if pi_r.probs.shape != (mdp.num_states, mdp.num_robot_actions):
        raise ConfigurationError(
            f"robot policy shape {pi_r.probs.shape} does not match MDP "
            f"({mdp.num_states}, {mdp.num_robot_actions})"
        )


def marginal_chain(mdp: TabularMDP, pi_h: Policy, pi_r: Policy) -> np.ndarray:
    """Marginalize both policies into the behavior chain T[s, s']."""
    _check_policies(mdp, pi_h, pi_r)
    # T[s, s'] = sum_{ah, ar} pi_h[s, ah] pi_r[s, ar] P[s, ah, ar, s']
    return np.einsum("sh,sr,shrt->st", pi_h.probs, pi_r.probs, mdp.transition, optimize=True)


def one_step_dist(
    mdp: TabularMDP,
    pi_h: Policy,
    pi_r: Policy,
    state: int,
    human_action: int | None = None,
    robot_action: int | None = None,
) -> np.ndarray:
    """Distribution of s_{t+1} from a state, optionally fixing either action."""
    _check_policies(mdp, pi_h, pi_r)
    if not 0 <= state < mdp.num_states:
        raise ConfigurationError(f"state index {state} out of range")
    block = mdp.transition[state]  # (AH, AR, S)
    if human_action is not None:
        if not 0 <= human_action < mdp.num_human_actions:
            raise ConfigurationError(f"human action {human_action} out of range")
        block = block[human_action][None, :, :]
        w_h = np.ones(1)
    else:
        w_h = pi_h.probs[state]
    if robot_action is not None:
        if not 0 <= robot_action < mdp.num_robot_actions:
            raise ConfigurationError(f"robot action {robot_action} out of range")
        block = block[:, robot_action, :][:, None, :]
        w_r = np.ones(1)
    else:
        w_r = pi_r.probs[state]
    return np.einsum("h,r,hrt->t", w_h, w_r, block)


def _occupancy_from_first_step(p1: np.ndarray, chain: np.ndarray, gamma: float) -> np.ndarray:
    """rho = (1-gamma) * p1 @ (I - gamma*chain)^-1 for K >= 1 geometric offsets."""
    n = chain.shape[0]
    try:
        sol = np.linalg.solve(np.eye(n) - gamma * chain.T, p1)
    except np.linalg.LinAlgError as exc:  # cannot happen for gamma < 1, but be loud
        raise NumericError(f"linear solve failed: {exc}") from exc
    rho = (1.0 - gamma) * sol
    total = rho.sum()
    if abs(total - 1.0) > 1e-8:
        raise NumericError(f"occupancy does not normalize (sum={total!r})")
    return np.clip(rho, 0.0, None)


def discounted_occupancy(
    mdp: TabularMDP,
    pi_h: Policy,
    pi_r: Policy,
    spec: DiscountSpec,
    condition: tuple[int, int | None] | None = None,
    robot_action: int | None = None,
) -> np.ndarray:
    """Distribution of the state K ~ Geom(1-gamma_future) steps ahead, K >= 1.

    condition=None starts from the initial distribution; condition=(s, None)
    starts from state s; condition=(s, ah) additionally fixes the human action
    at the first step.  robot_action optionally fixes the robot's action at
    the first step (used by estimator cross-checks).
    """
    gamma = spec.gamma_future
    chain = marginal_chain(mdp, pi_h, pi_r)
    if condition is None:
        if robot_action is not None:
            raise ConfigurationError("robot_action conditioning requires a state")
        p1 = mdp.initial_dist @ chain
    else:
        state, human_action = condition
        p1 = one_step_dist(mdp, pi_h, pi_r, state, human_action, robot_action)
    return _occupancy_from_first_step(p1, chain, gamma)


def discounted_state_visitation(
    mdp: TabularMDP, pi_h: Policy, pi_r: Policy, spec: DiscountSpec
) -> np.ndarray:
    """Unnormalized visitation d(s) = sum_t gamma_future^t P(s_t = s).

    Entries sum to 1/(1-gamma_future).
    """
    gamma = spec.gamma_future
    chain = marginal_chain(mdp, pi_h, pi_r)
    n = chain.shape[0]
    try:
        d = np.linalg.solve(np.eye(n) - gamma * chain.T, mdp.initial_dist)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"linear solve failed: {exc}") from exc
    total = d.sum()
    if abs(total - 1.0 / (1.0 - gamma)) > 1e-6 * max(1.0, 1.0 / (1.0 - gamma)):
        raise NumericError(f"visitation mass {total!r} != 1/(1-gamma)")
    return np.clip(d, 0.0, None)


def random_mdp(
    num_states: int,
    num_human_actions: int,
    num_robot_actions: int,
    rng: np.random.Generator,
    smoothing: float = 0.0,
) -> TabularMDP:
    """Random dense MDP; smoothing > 0 guarantees full-support rows (ergodicity)."""
    t = rng.random((num_states, num_human_actions, num_robot_actions, num_states)) + smoothing
    t /= t.sum(axis=-1, keepdims=True)
    p0 = rng.random(num_states) + smoothing
    p0 /= p0.sum()
    return TabularMDP(transition=t, initial_dist=p0)
