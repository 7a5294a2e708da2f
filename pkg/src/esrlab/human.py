"""Boltzmann-rational simulated humans and the scaled-simplex reward prior."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError
from .mdp import Policy, TabularMDP, _check_policies

MEAN_OFFSET = "mean_offset"
NONNEGATIVE = "nonnegative"


@dataclass(frozen=True)
class RewardVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class SoftSolution:
    q_values: np.ndarray  # (S, AH)
    values: np.ndarray  # (S,)
    policy: Policy
    beta: float
    bellman_residual: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "q_values": self.q_values.tolist(),
                "values": self.values.tolist(),
                "policy": self.policy.probs.tolist(),
                "beta": self.beta,
                "bellman_residual": self.bellman_residual,
            }
        )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def soft_value_iteration(
    mdp: TabularMDP,
    pi_r: Policy,
    reward: RewardVector,
    beta: float,
    gamma: float,
    tol: float = 1e-8,
    max_iters: int = 10_000,
    method: str = "sweep",
) -> SoftSolution:
    """Fixed point of Q(s,a) = R(s) + gamma * sum_{s'} Pbar(s'|s,a) V(s')
    with V(s) = sum_a pi(a|s) Q(s,a) and pi = softmax(beta * Q).

    method="sweep" runs synchronous sweeps; method="solve" alternates a policy
    softmax with an exact linear evaluation of V (same fixed point, far fewer
    iterations when gamma is close to 1).
    """
    if beta < 0:
        raise ConfigurationError("beta must be >= 0")
    if not (0.0 < gamma < 1.0):
        raise ConfigurationError("gamma must lie in (0, 1)")
    r = np.asarray(reward.values, dtype=float)
    if r.shape != (mdp.num_states,):
        raise ConfigurationError("reward length must equal num_states")
    # robot-marginalized transition Pbar(s'|s,ah)
    pbar = np.einsum("sr,shrt->sht", pi_r.probs, mdp.transition, optimize=True)

    n, a = mdp.num_states, mdp.num_human_actions
    q = np.zeros((n, a))
    residual = np.inf
    if method == "sweep":
        for _ in range(max_iters):
            pi = _softmax_rows(beta * q)
            v = (pi * q).sum(axis=1)
            q_new = r[:, None] + gamma * pbar @ v
            residual = float(np.abs(q_new - q).max())
            q = q_new
            if residual < tol:
                break
    elif method == "solve":
        for _ in range(max_iters):
            pi = _softmax_rows(beta * q)
            chain = np.einsum("sh,sht->st", pi, pbar)
            v = np.linalg.solve(np.eye(n) - gamma * chain, r)
            q_new = r[:, None] + gamma * pbar @ v
            residual = float(np.abs(q_new - q).max())
            q = q_new
            if residual < tol:
                break
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    if residual >= tol:
        raise NumericError(f"soft value iteration did not converge (residual {residual:.3e})")
    pi = _softmax_rows(beta * q)
    v = (pi * q).sum(axis=1)
    return SoftSolution(
        q_values=q, values=v, policy=Policy(pi), beta=float(beta), bellman_residual=residual
    )


def sample_reward_prior(
    num_states: int,
    gamma: float,
    rng: np.random.Generator,
    variant: str = MEAN_OFFSET,
) -> RewardVector:
    """Draw x ~ Dirichlet(1,...,1) over |S| and scale.

    mean_offset: R(s) = (1-gamma) x_s - 1/|S|  (sums to -gamma exactly)
    nonnegative: R(s) = (1-gamma) x_s          (keeps values in [0, 1])
    """
    if num_states < 1:
        raise ConfigurationError("num_states must be >= 1")
    x = rng.dirichlet(np.ones(num_states))
    if variant == MEAN_OFFSET:
        return RewardVector((1.0 - gamma) * x - 1.0 / num_states)
    if variant == NONNEGATIVE:
        return RewardVector((1.0 - gamma) * x)
    raise ConfigurationError(f"unknown reward-prior variant {variant!r}")


def expected_human_return(
    mdp: TabularMDP,
    pi_r: Policy,
    beta: float,
    gamma: float,
    num_reward_samples: int,
    rng: np.random.Generator,
    variant: str = NONNEGATIVE,
    tol: float = 1e-8,
    max_iters: int = 10_000,
    method: str = "sweep",
) -> tuple[float, float]:
    """Monte-Carlo average over R ~ prior of V(s0) under the per-R Boltzmann
    policy, with s0 ~ initial_dist evaluated exactly.  Returns (mean, SE)."""
    if num_reward_samples < 1:
        raise ConfigurationError("num_reward_samples must be >= 1")
    _check_policies(mdp, Policy.uniform(mdp.num_states, mdp.num_human_actions), pi_r)
    vals = np.empty(num_reward_samples)
    for i in range(num_reward_samples):
        reward = sample_reward_prior(mdp.num_states, gamma, rng, variant)
        sol = soft_value_iteration(
            mdp, pi_r, reward, beta, gamma, tol=tol, max_iters=max_iters, method=method
        )
        vals[i] = float(mdp.initial_dist @ sol.values)
    se = float(vals.std(ddof=1) / np.sqrt(num_reward_samples)) if num_reward_samples > 1 else 0.0
    return float(vals.mean()), se


# ---------------------------------------------------------------------------
# gridworld human


class BoltzmannGridHuman:
    """Boltzmann-rational navigator with a goal-indicator reward.

    Plans over the human's own cell on the open grid: the human knows the
    geometry and the goal but does not model the blocks or the robot that
    moves them, so a move into a block simply fails in the world.  This is
    the benchmark's naive navigator; it can be walled in and relies on
    outside help to get free.  The goal cell is absorbing with reward 1
    per step, and actions are sampled proportional to exp(beta * Q).
    """

    def __init__(self, config, beta: float = 5.0, gamma: float = 0.9, tol: float = 1e-6):
        self.config = config
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.tol = tol
        self._q: np.ndarray | None = None

    def q_table(self) -> np.ndarray:
        """Q over (cell, action), solved once on the block-free grid."""
        if self._q is not None:
            return self._q
        from .gridworld import HUMAN_ACTIONS, STAY, _move

        cfg = self.config
        n = cfg.num_cells
        nxt = np.empty((n, HUMAN_ACTIONS), dtype=int)
        for c in range(n):
            for a in range(HUMAN_ACTIONS):
                if c == cfg.goal_cell or a == STAY:
                    nxt[c, a] = c
                else:
                    t = _move(c, a, cfg)
                    nxt[c, a] = c if t is None else t
        r = np.zeros(n)
        r[cfg.goal_cell] = 1.0
        v = np.zeros(n)
        for _ in range(10_000):
            q = r[:, None] + self.gamma * v[nxt]
            pi = _softmax_rows(self.beta * q)
            v_new = (pi * q).sum(axis=1)
            if np.abs(v_new - v).max() < self.tol:
                v = v_new
                break
            v = v_new
        q = r[:, None] + self.gamma * v[nxt]
        self._q = q
        return q

    def action_probs(self, state) -> np.ndarray:
        q = self.q_table()[state.human_cell]
        return _softmax_rows(self.beta * q[None, :])[0]

    def act(self, state, rng: np.random.Generator) -> int:
        p = self.action_probs(state)
        return int(rng.choice(len(p), p=p))

    def tabular_policy(self, tab) -> Policy:
        """Policy matrix over a GridTabular enumeration (for exact oracles)."""
        q = self.q_table()
        probs = np.empty((tab.num_states, 5))
        for i in range(tab.num_states):
            st = tab.state_of(i)
            probs[i] = _softmax_rows(self.beta * q[st.human_cell][None, :])[0]
        return Policy(probs)
