"""Exact information-theoretic ground truth.

Per-state conditional mutual information, total effective empowerment,
state-marginal-polytope KL geometry, Blahut-Arimoto channel capacity, and
numeric verifiers for the softmax-entropy and empowerment-vs-return bounds.
All quantities are in nats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError
from .human import NONNEGATIVE, sample_reward_prior, soft_value_iteration
from .mdp import (
    DiscountSpec,
    Policy,
    TabularMDP,
    discounted_occupancy,
    discounted_state_visitation,
)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats with 0*log(0) := 0."""
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


@dataclass(frozen=True)
class EmpowermentReport:
    per_state_mi: np.ndarray
    per_state_dmax: np.ndarray
    per_state_capacity: np.ndarray
    total_empowerment: float
    visitation: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_state_mi": self.per_state_mi.tolist(),
                "per_state_dmax": self.per_state_dmax.tolist(),
                "per_state_capacity": self.per_state_capacity.tolist(),
                "total_empowerment": self.total_empowerment,
                "visitation": self.visitation.tolist(),
            }
        )


def _action_conditionals(
    mdp: TabularMDP, pi_h: Policy, pi_r: Policy, spec: DiscountSpec, state: int
) -> np.ndarray:
    """rho(. | s, ah) stacked over human actions: shape (AH, S)."""
    return np.stack(
        [
            discounted_occupancy(mdp, pi_h, pi_r, spec, condition=(state, a))
            for a in range(mdp.num_human_actions)
        ]
    )


def polytope_stats(
    mdp: TabularMDP, pi_h: Policy, pi_r: Policy, spec: DiscountSpec, state: int
) -> tuple[np.ndarray, float]:
    """Per-action KL(rho(.|s,a) || rho(.|s)) and their maximum d_max."""
    cond = _action_conditionals(mdp, pi_h, pi_r, spec, state)
    avg = pi_h.probs[state] @ cond
    kls = np.array([kl_divergence(cond[a], avg) for a in range(cond.shape[0])])
    return kls, float(kls.max())


def conditional_mi(
    mdp: TabularMDP, pi_h: Policy, pi_r: Policy, spec: DiscountSpec, state: int
) -> float:
    """I(a_h; s_plus | s) = sum_a pi_h(a|s) KL(rho(.|s,a) || rho(.|s))."""
    cond = _action_conditionals(mdp, pi_h, pi_r, spec, state)
    weights = pi_h.probs[state]
    avg = weights @ cond
    total = 0.0
    for a in range(cond.shape[0]):
        if weights[a] > 0:
            total += weights[a] * kl_divergence(cond[a], avg)
    return max(total, 0.0)


def effective_empowerment(
    mdp: TabularMDP,
    pi_h: Policy,
    pi_r: Policy,
    spec: DiscountSpec,
    capacity_tol: float = 1e-8,
    with_capacity: bool = True,
) -> EmpowermentReport:
    """Discounted-visitation-weighted sum of per-state conditional MI.

    The visitation weighting is the unnormalized sum_t gamma^t mass.
    """
    from .mdp import marginal_chain

    n = mdp.num_states
    gamma = spec.gamma_future
    chain = marginal_chain(mdp, pi_h, pi_r)
    inv = np.linalg.inv(np.eye(n) - gamma * chain)
    # robot-marginalized one-step distributions, then all conditionals at once
    p1 = np.einsum("sr,shrt->sht", pi_r.probs, mdp.transition, optimize=True)
    rho = (1.0 - gamma) * np.einsum("shi,ij->shj", p1, inv, optimize=True)
    rho = np.clip(rho, 0.0, None)
    mi = np.empty(n)
    dmax = np.empty(n)
    cap = np.empty(n)
    for s in range(n):
        cond = rho[s]
        weights = pi_h.probs[s]
        avg = weights @ cond
        kls = np.array([kl_divergence(cond[a], avg) for a in range(cond.shape[0])])
        mi[s] = max(float(weights @ kls), 0.0)
        dmax[s] = float(kls.max())
        cap[s] = blahut_arimoto(cond, tol=capacity_tol)[0] if with_capacity else float("nan")
    d = discounted_state_visitation(mdp, pi_h, pi_r, spec)
    return EmpowermentReport(
        per_state_mi=mi,
        per_state_dmax=dmax,
        per_state_capacity=cap,
        total_empowerment=float(d @ mi),
        visitation=d,
    )


def blahut_arimoto(
    channel: np.ndarray, tol: float = 1e-10, max_iters: int = 10_000
) -> tuple[float, np.ndarray]:
    """Capacity (nats) of the channel rows p(y|x) and the achieving input.

    Iterates until the duality gap max_x KL_x - sum_x q_x KL_x falls below
    tol (the gap upper-bounds the capacity error).  The plain multiplicative
    update has a sublinear tail on near-degenerate channels, so every cycle
    attempts a SQUAREM extrapolation through two base steps, falling back to
    the safe update whenever the extrapolated point leaves the simplex.
    """
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    p = np.asarray(channel, dtype=float)
    if p.ndim != 2:
        raise ConfigurationError("channel must be a (inputs x outputs) matrix")
    na = p.shape[0]
    plogp = np.sum(np.where(p > 0, p * np.log(p, where=p > 0, out=np.zeros_like(p)), 0.0), axis=1)

    def row_kls(q: np.ndarray) -> np.ndarray:
        out = q @ p
        bad = (p > 0) & (out[None, :] <= 0)
        log_out = np.log(out, where=out > 0, out=np.zeros_like(out))
        kls = plogp - p @ log_out
        kls[bad.any(axis=1)] = np.inf
        return kls

    def base_step(q: np.ndarray, kls: np.ndarray) -> np.ndarray:
        nxt = q * np.exp(kls - kls.max())
        return nxt / nxt.sum()

    q = np.full(na, 1.0 / na)
    gap = np.inf
    for _ in range(max_iters):
        kls0 = row_kls(q)
        capacity = float(q @ kls0)
        gap = float(kls0.max() - capacity)
        if gap < tol:
            return capacity, q
        q1 = base_step(q, kls0)
        q2 = base_step(q1, row_kls(q1))
        r = q1 - q
        v = (q2 - q1) - r
        norm_v = float(np.linalg.norm(v))
        q_next = q2
        if norm_v > 0:
            alpha = -float(np.linalg.norm(r)) / norm_v
            q_ext = q - 2.0 * alpha * r + alpha * alpha * v
            # components driven to zero may overshoot; floor them instead of
            # rejecting the whole extrapolation
            q_ext = np.clip(q_ext, 1e-300, None)
            q_ext /= q_ext.sum()
            kls_ext = row_kls(q_ext)
            if np.all(np.isfinite(kls_ext)):
                # stabilize with one base step, then keep the extrapolation
                # only when its capacity lower bound beats the plain update
                q_stab = base_step(q_ext, kls_ext)
                kls_stab = row_kls(q_stab)
                if float(q_stab @ kls_stab) >= float(q2 @ row_kls(q2)):
                    q_next = q_stab
        q = q_next
    raise NumericError(f"Blahut-Arimoto hit the {max_iters}-iteration guard (gap {gap:.3e})")


def channel_capacity(
    mdp: TabularMDP,
    pi_h: Policy,
    pi_r: Policy,
    spec: DiscountSpec,
    state: int,
    tol: float = 1e-10,
) -> tuple[float, np.ndarray]:
    """Capacity of the per-state action channel a -> rho(.|s,a).

    pi_h enters only through the occupancy chain for steps after the first
    (the capacity optimizes over the first-step input distribution).
    """
    cond = _action_conditionals(mdp, pi_h, pi_r, spec, state)
    return blahut_arimoto(cond, tol=tol)


def verify_entropy_bound(k: int, beta: float, logits: np.ndarray | None = None) -> dict:
    """Check H(softmax(beta * logits)) >= log k - (beta/e)^2 for logits in [0,1]^k.

    Defaults to the worst-case logits (1, 0, ..., 0).
    """
    if k < 2:
        raise ConfigurationError("k must be >= 2")
    if beta < 0:
        raise ConfigurationError("beta must be >= 0")
    if logits is None:
        logits = np.zeros(k)
        logits[0] = 1.0
    logits = np.asarray(logits, dtype=float)
    if logits.shape != (k,) or np.any(logits < 0) or np.any(logits > 1):
        raise ConfigurationError("logits must lie in [0, 1]^k")
    z = beta * logits
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    entropy = float(-np.sum(p * np.log(p, where=p > 0, out=np.zeros_like(p))))
    bound = float(np.log(k) - (beta / np.e) ** 2)
    return {"holds": entropy >= bound - 1e-12, "lhs": entropy, "rhs": bound}


def verify_theorem_bound(
    mdp: TabularMDP,
    pi_r: Policy,
    beta: float,
    gamma: float,
    num_reward_samples: int,
    rng: np.random.Generator,
    solver_tol: float = 1e-8,
    solver_max_iters: int = 1_000,
) -> dict:
    """Numeric check of sqrt(empowerment) <= (beta/e) * average human return.

    Samples rewards from the nonnegative prior, solves the Boltzmann human per
    reward, and averages per-reward empowerment and start-state value.  The
    check is asymptotic in gamma; callers should use gamma >= 0.99.
    """
    if gamma < 0.99:
        raise ConfigurationError("the bound is asymptotic; use gamma >= 0.99")
    if beta <= 0:
        raise ConfigurationError("beta must be > 0")
    spec = DiscountSpec(gamma_future=gamma)
    uniform_h = Policy.uniform(mdp.num_states, mdp.num_human_actions)
    rho0 = discounted_occupancy(mdp, uniform_h, pi_r, spec, condition=None)
    unreachable = np.flatnonzero(rho0 <= 0)
    if unreachable.size:
        raise ConfigurationError(
            f"ergodicity check failed: states {unreachable.tolist()} unreachable from s0"
        )
    emps = np.empty(num_reward_samples)
    vals = np.empty(num_reward_samples)
    for i in range(num_reward_samples):
        reward = sample_reward_prior(mdp.num_states, gamma, rng, NONNEGATIVE)
        sol = soft_value_iteration(
            mdp, pi_r, reward, beta, gamma,
            tol=solver_tol, max_iters=solver_max_iters, method="solve",
        )
        report = effective_empowerment(mdp, sol.policy, pi_r, spec, with_capacity=False)
        emps[i] = report.total_empowerment
        vals[i] = float(mdp.initial_dist @ sol.values)
    lhs = float(np.sqrt(max(emps.mean(), 0.0)))
    rhs = float((beta / np.e) * vals.mean())
    return {"lhs": lhs, "rhs": rhs, "margin": rhs - lhs}
