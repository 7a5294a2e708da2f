"""Contrastive successor-representation estimator.

Three encoders are trained with a symmetrized infoNCE objective so that
inner-product differences estimate the log-ratio of action-conditioned to
action-marginalized future-state likelihoods:

  phi(s, a_r, a_h)  -- controlled latent model
  phi'(s, a_r)      -- uncontrolled latent model
  psi(g)            -- future-state encoder (shared by both losses)

Encoders are either MLPs over flat feature vectors or embedding tables over
enumerated inputs (the "tabular-capacity" variant used for exactness checks).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import NumericError, UsageError
from .buffer import EpisodeBuffer

logger = logging.getLogger(__name__)

EXP_CAP = 30.0


class MLPEncoder(nn.Module):
    """Two hidden SiLU layers over a flat feature vector."""

    def __init__(self, in_dim: int, latent_dim: int, width: int = 256, dtype=torch.float64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, width, dtype=dtype),
            nn.SiLU(),
            nn.Linear(width, width, dtype=dtype),
            nn.SiLU(),
            nn.Linear(width, latent_dim, dtype=dtype),
        )

    def forward(self, x):
        return self.net(x)


class TabularEncoder(nn.Module):
    """One free latent vector per enumerated input (full-capacity lookup)."""

    def __init__(self, num_inputs: int, latent_dim: int, dtype=torch.float64):
        super().__init__()
        self.table = nn.Embedding(num_inputs, latent_dim, dtype=dtype)
        nn.init.normal_(self.table.weight, std=0.01)

    def forward(self, idx):
        return self.table(idx)


@dataclass
class ReprParams:
    """The three encoders plus their shared latent dimension."""

    phi: nn.Module
    phi_prime: nn.Module
    psi: nn.Module
    latent_dim: int
    condition_robot_action: bool = True

    def parameters(self):
        for module in (self.phi, self.phi_prime, self.psi):
            yield from module.parameters()

    def state_dicts(self) -> dict:
        return {
            "phi": self.phi.state_dict(),
            "phi_prime": self.phi_prime.state_dict(),
            "psi": self.psi.state_dict(),
        }

    def load_state_dicts(self, dumps: dict) -> None:
        self.phi.load_state_dict(dumps["phi"])
        self.phi_prime.load_state_dict(dumps["phi_prime"])
        self.psi.load_state_dict(dumps["psi"])


@dataclass
class ContrastiveBatch:
    """Prepared encoder inputs for N paired records."""

    x_phi: torch.Tensor
    x_phi_prime: torch.Tensor
    x_psi: torch.Tensor

    def __post_init__(self):
        n = self.x_phi.shape[0]
        if n < 1 or self.x_phi_prime.shape[0] != n or self.x_psi.shape[0] != n:
            raise UsageError("batch inputs must share a positive leading dimension")

    def __len__(self) -> int:
        return self.x_phi.shape[0]


def infonce_objective(x, y) -> float:
    """Symmetrized infoNCE: sum_i [log softmax_j(x_i.y_j)[i] + log softmax_j(x_j.y_i)[i]].

    Always <= 0; a maximization objective.
    """
    x = torch.as_tensor(x, dtype=torch.float64) if not torch.is_tensor(x) else x
    y = torch.as_tensor(y, dtype=torch.float64) if not torch.is_tensor(y) else y
    return float(_infonce(x, y).item())


def _infonce(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    if x.shape != y.shape:
        raise UsageError(f"embedding shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    logits = x @ y.T  # logits[i, j] = x_i . y_j
    forward = torch.diag(torch.log_softmax(logits, dim=1))
    backward = torch.diag(torch.log_softmax(logits, dim=0))
    return forward.sum() + backward.sum()


def repr_loss(params: ReprParams, batch: ContrastiveBatch) -> torch.Tensor:
    """Mean negative log-softmax over the 4N classification terms.

    Zero logits give exactly log N.
    """
    n = len(batch)
    psi_g = params.psi(batch.x_psi)
    term_phi = _infonce(params.phi(batch.x_phi), psi_g)
    term_phi_prime = _infonce(params.phi_prime(batch.x_phi_prime), psi_g)
    return -(term_phi + term_phi_prime) / (4.0 * n)


def repr_loss_and_grads(params: ReprParams, batch: ContrastiveBatch):
    """Loss plus reverse-mode gradients for every encoder parameter."""
    for p in params.parameters():
        if p.grad is not None:
            p.grad = None
    loss = repr_loss(params, batch)
    if not torch.isfinite(loss):
        idx = _first_nonfinite_record(params, batch)
        raise NumericError(f"non-finite contrastive loss (first offending record {idx})")
    loss.backward()
    grads = {name_i: p.grad.clone() for name_i, p in enumerate(params.parameters())}
    return float(loss.item()), grads


def _first_nonfinite_record(params: ReprParams, batch: ContrastiveBatch) -> int:
    with torch.no_grad():
        embs = (
            params.phi(batch.x_phi),
            params.phi_prime(batch.x_phi_prime),
            params.psi(batch.x_psi),
        )
        bad = ~torch.stack([torch.isfinite(e).all(dim=1) for e in embs]).all(dim=0)
        hits = torch.nonzero(bad)
    return int(hits[0]) if len(hits) else -1


def esr_reward(
    params: ReprParams,
    x_phi: torch.Tensor,
    x_phi_prime: torch.Tensor,
    x_psi: torch.Tensor,
) -> torch.Tensor:
    """(phi(s,a_r,a_h) - phi'(s,a_r)) . psi(g), unclipped, per record."""
    with torch.no_grad():
        diff = params.phi(x_phi) - params.phi_prime(x_phi_prime)
        return (diff * params.psi(x_psi)).sum(dim=-1)


def esr_reward_mixture(
    params: ReprParams,
    x_phi: torch.Tensor,
    x_phi_prime: torch.Tensor,
    x_psi: torch.Tensor,
    weights: np.ndarray,
    anchor: np.ndarray,
    num_anchors: int,
) -> torch.Tensor:
    """(phi - phi') . E_K[psi(g)] with the geometric expectation taken
    exactly over each anchor's stored future states.

    x_psi stacks the future states of all anchors; weights and anchor give
    each row's probability and owning anchor.  Zero-variance in K compared
    to esr_reward, identical expectation.
    """
    with torch.no_grad():
        diff = params.phi(x_phi) - params.phi_prime(x_phi_prime)
        psi = params.psi(x_psi)
        w = torch.as_tensor(weights, dtype=psi.dtype)
        idx = torch.as_tensor(anchor, dtype=torch.long)
        mixed = torch.zeros(num_anchors, psi.shape[1], dtype=psi.dtype)
        mixed.index_add_(0, idx, psi * w[:, None])
        return (diff * mixed).sum(dim=-1)


def esr_reward_simplified(
    params: ReprParams, x_phi: torch.Tensor, x_phi_prime: torch.Tensor
) -> torch.Tensor:
    """Future-sampling-free reward: exp(||phi||^2 / 2) (phi - phi') . phi."""
    with torch.no_grad():
        phi = params.phi(x_phi)
        diff = phi - params.phi_prime(x_phi_prime)
        exponent = 0.5 * (phi ** 2).sum(dim=-1)
        if bool((exponent > EXP_CAP).any()):
            logger.warning("simplified-reward exponent capped at %.0f", EXP_CAP)
            exponent = exponent.clamp(max=EXP_CAP)
        return torch.exp(exponent) * (diff * phi).sum(dim=-1)


def estimate_mi_at_state(
    params: ReprParams,
    featurizer,
    state_row: np.ndarray,
    buffer: EpisodeBuffer,
    num_g_samples: int,
    gamma_future: float,
    rng: np.random.Generator,
) -> float:
    """Empirical mean of the ESR reward at one state; NaN when the buffer holds
    no anchor visits of that state."""
    fut = buffer.sample_future_from_state(state_row, num_g_samples, gamma_future, rng)
    if fut is None:
        return float("nan")
    x_phi, x_phi_prime, x_psi = featurizer.batch_inputs(fut)
    return float(esr_reward(params, x_phi, x_phi_prime, x_psi).mean().item())


def estimate_mi(
    params: ReprParams,
    featurizer,
    buffer: EpisodeBuffer,
    num_samples: int,
    gamma_future: float,
    rng: np.random.Generator,
) -> float:
    """Buffer-wide mean ESR reward (the training diagnostic)."""
    fut = buffer.sample_future(num_samples, gamma_future, rng)
    x_phi, x_phi_prime, x_psi = featurizer.batch_inputs(fut)
    return float(esr_reward(params, x_phi, x_phi_prime, x_psi).mean().item())


# ---------------------------------------------------------------------------
# featurizers: raw integer state rows -> encoder inputs


class GridFeaturizer:
    """Channel-grid features for the gridworld (state rows: human + blocks)."""

    def __init__(self, config, condition_robot_action: bool = True, dtype=torch.float64):
        from .gridworld import feature_length

        self.config = config
        self.condition_robot_action = condition_robot_action
        self.dtype = dtype
        self.phi_dim = feature_length(config, True, condition_robot_action)
        self.phi_prime_dim = feature_length(config, False, condition_robot_action)
        self.psi_dim = feature_length(config, False, False)

    def _features(self, rows: np.ndarray, a_h=None, a_r=None) -> torch.Tensor:
        from .gridworld import featurize_batch

        human = rows[:, 0]
        blocks = rows[:, 1:]
        feats = featurize_batch(human, blocks, self.config, a_h, a_r)
        return torch.as_tensor(feats, dtype=self.dtype)

    def state_inputs(self, rows: np.ndarray) -> torch.Tensor:
        return self._features(rows)

    def batch_inputs(self, fut) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        a_r = fut.a_r if self.condition_robot_action else None
        return (
            self._features(fut.s, fut.a_h, a_r),
            self._features(fut.s, None, a_r),
            self._features(fut.g),
        )

    def build_encoders(
        self, latent_dim: int, width: int = 256, dtype=torch.float64
    ) -> ReprParams:
        return ReprParams(
            phi=MLPEncoder(self.phi_dim, latent_dim, width, dtype),
            phi_prime=MLPEncoder(self.phi_prime_dim, latent_dim, width, dtype),
            psi=MLPEncoder(self.psi_dim, latent_dim, width, dtype),
            latent_dim=latent_dim,
            condition_robot_action=self.condition_robot_action,
        )


class TabularFeaturizer:
    """Index features for enumerated MDPs (state rows: single state index)."""

    def __init__(self, num_states: int, num_human_actions: int, num_robot_actions: int,
                 condition_robot_action: bool = True):
        self.n = num_states
        self.ah = num_human_actions
        self.ar = num_robot_actions
        self.condition_robot_action = condition_robot_action

    def batch_inputs(self, fut) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        s = fut.s[:, 0]
        g = fut.g[:, 0]
        if self.condition_robot_action:
            phi_idx = (s * self.ah + fut.a_h) * self.ar + fut.a_r
            phi_prime_idx = s * self.ar + fut.a_r
        else:
            phi_idx = s * self.ah + fut.a_h
            phi_prime_idx = s
        return (
            torch.as_tensor(phi_idx, dtype=torch.long),
            torch.as_tensor(phi_prime_idx, dtype=torch.long),
            torch.as_tensor(g, dtype=torch.long),
        )

    def build_encoders(self, latent_dim: int, dtype=torch.float64) -> ReprParams:
        n_phi = self.n * self.ah * (self.ar if self.condition_robot_action else 1)
        n_phi_prime = self.n * (self.ar if self.condition_robot_action else 1)
        return ReprParams(
            phi=TabularEncoder(n_phi, latent_dim, dtype),
            phi_prime=TabularEncoder(n_phi_prime, latent_dim, dtype),
            psi=TabularEncoder(self.n, latent_dim, dtype),
            latent_dim=latent_dim,
            condition_robot_action=self.condition_robot_action,
        )


# ---------------------------------------------------------------------------
# checkpointing

CHECKPOINT_VERSION = 1


def save_repr_checkpoint(path, params: ReprParams, extra: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "latent_dim": params.latent_dim,
        "condition_robot_action": params.condition_robot_action,
        "shapes": {
            name: {k: list(v.shape) for k, v in module.state_dict().items()}
            for name, module in (("phi", params.phi), ("phi_prime", params.phi_prime), ("psi", params.psi))
        },
        "state": params.state_dicts(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_repr_checkpoint(path, params: ReprParams) -> dict:
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported checkpoint version {payload.get('version')!r}")
    params.load_state_dicts(payload["state"])
    return payload.get("extra", {})
