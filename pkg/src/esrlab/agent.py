"""Assistive policy: discrete soft Q-learning on the contrastive reward.

The training loop alternates rollouts, representation updates, and critic
updates.  Rewards are never stored with transitions; they are recomputed from
the current representations at every critic update (relabeling).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import contrastive
from .buffer import EpisodeBuffer, FutureBatch
from .contrastive import ContrastiveBatch, GridFeaturizer, MLPEncoder, ReprParams
from .errors import ConfigurationError, NumericError
from .gridworld import STAY, GridConfig, GridState, grid_step, initial_state
from .human import BoltzmannGridHuman

REWARD_SAMPLED = "sampled"
REWARD_SIMPLIFIED = "simplified"

METRICS_COLUMNS = [
    "epoch",
    "env_steps",
    "repr_loss",
    "mi_estimate",
    "oracle_empowerment",
    "success_rate",
    "mean_steps_to_goal",
    "q_loss",
]


@dataclass
class AssistantCritic:
    q_net: nn.Module
    target_net: nn.Module
    num_actions: int
    alpha: float = 0.05
    gamma_rl: float = 0.9
    target_interval: int = 512
    updates: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError("temperature alpha must be > 0")
        if not (0.0 <= self.gamma_rl < 1.0):
            raise ConfigurationError("gamma_rl must lie in [0, 1)")
        self.target_net.load_state_dict(self.q_net.state_dict())

    @classmethod
    def build(cls, in_dim: int, num_actions: int, width: int = 256, dtype=torch.float64, **kw):
        return cls(
            q_net=MLPEncoder(in_dim, num_actions, width, dtype),
            target_net=MLPEncoder(in_dim, num_actions, width, dtype),
            num_actions=num_actions,
            **kw,
        )

    def q_values(self, s_feat: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.q_net(s_feat)


def soft_q_update(
    critic: AssistantCritic,
    optimizer: torch.optim.Optimizer,
    s_feat: torch.Tensor,
    a_r: np.ndarray,
    done: np.ndarray,
    s_next_feat: torch.Tensor,
    rewards: torch.Tensor,
) -> float:
    """One soft-Bellman regression step on relabeled rewards.

    y = r + gamma_rl * alpha * logsumexp(Q_target(s') / alpha) unless done.
    """
    alpha, gamma = critic.alpha, critic.gamma_rl
    with torch.no_grad():
        q_next = critic.target_net(s_next_feat)
        v_next = alpha * torch.logsumexp(q_next / alpha, dim=-1)
        not_done = torch.as_tensor(~done, dtype=rewards.dtype)
        y = rewards + gamma * v_next * not_done
    if not torch.isfinite(y).all():
        raise NumericError("non-finite soft-Q target")
    q = critic.q_net(s_feat)
    chosen = q.gather(1, torch.as_tensor(a_r, dtype=torch.long).unsqueeze(1)).squeeze(1)
    loss = ((chosen - y) ** 2).mean()
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    critic.updates += 1
    if critic.updates % critic.target_interval == 0:
        critic.target_net.load_state_dict(critic.q_net.state_dict())
    return float(loss.item())


def assistant_action(
    critic: AssistantCritic,
    s_feat: torch.Tensor,
    rng: np.random.Generator,
    evaluate: bool = False,
) -> int:
    """Training: sample softmax(Q / alpha); evaluation: lowest-index argmax."""
    q = critic.q_values(s_feat.reshape(1, -1))[0].numpy()
    if evaluate:
        return int(np.argmax(q))
    z = q / critic.alpha
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    grid: GridConfig
    epochs: int = 300
    episodes_per_epoch: int = 8
    repr_updates: int = 64
    critic_updates: int = 64
    repr_batch: int = 256
    rl_batch: int = 256
    latent_dim: int = 100
    width: int = 256
    lr: float = 3e-4
    critic_width: int | None = None  # None: reuse the encoder width
    critic_lr: float | None = None  # None: reuse the encoder step size
    alpha: float = 0.05
    gamma_future: float = 0.9
    gamma_rl: float = 0.9
    human_beta: float = 5.0
    human_gamma: float = 0.9
    condition_robot_action: bool = True
    reward_mode: str = REWARD_SAMPLED
    center_rewards: bool = True
    rollout_continuation: str = "respawn"  # "stop" | "absorb" | "respawn"
    ema_relabel: bool = True  # relabel rewards with an averaged encoder copy
    ema_decay: float = 0.995
    decorrelate_reward_action: bool = True  # score rewards at a resampled a_r
    replay_capacity: int = 100_000
    eval_episodes: int = 8
    oracle_every: int = 0  # 0 disables the per-epoch exact-empowerment log
    oracle_state_bound: int = 700
    seed: int = 0
    dtype: str = "float32"
    resolve_human_each_epoch: bool = False
    max_seconds: float | None = 7200.0  # wall-clock guard; graceful truncation

    def __post_init__(self):
        if self.reward_mode not in (REWARD_SAMPLED, REWARD_SIMPLIFIED):
            raise ConfigurationError(f"unknown reward_mode {self.reward_mode!r}")
        if self.rollout_continuation not in ("stop", "absorb", "respawn"):
            raise ConfigurationError(
                f"unknown rollout_continuation {self.rollout_continuation!r}")
        if self.epochs < 0 or self.episodes_per_epoch < 1:
            raise ConfigurationError("bad training budgets")


@dataclass
class TrainArtifacts:
    critic: AssistantCritic
    repr_params: ReprParams
    featurizer: GridFeaturizer
    buffer: EpisodeBuffer
    metrics_path: Path | None
    metrics_rows: list = field(default_factory=list)
    truncated: bool = False

    def final_success(self, window: int = 5) -> float:
        rows = [r for r in self.metrics_rows if r["success_rate"] != ""]
        if not rows:
            return float("nan")
        tail = rows[-window:]
        return float(np.mean([float(r["success_rate"]) for r in tail]))


def _state_row(state: GridState) -> np.ndarray:
    return np.array([state.human_cell, *state.block_cells], dtype=np.int64)


def rollout_episode(
    config: GridConfig,
    human: BoltzmannGridHuman,
    rng: np.random.Generator,
    robot_policy,
    continuation: str = "stop",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool, bool]:
    """One episode; robot_policy maps GridState -> action index.

    Training collection should not stop at the goal: a return-maximizing
    critic would then profit from delaying it.  Two continuation modes run
    the episode to the horizon and report it as time-capped rather than
    terminal.  "absorb" keeps the human sitting at the goal while the robot
    acts; "respawn" drops the human at a fresh free cell so post-goal states
    look like ordinary play and reaching the goal costs the critic nothing.
    Success is always first contact with the goal.
    """
    state = initial_state(config, rng)
    rows = [_state_row(state)]
    a_hs, a_rs = [], []
    while not state.done:
        a_h = human.act(state, rng)
        a_r = robot_policy(state)
        state = grid_step(state, a_h, a_r, config)
        rows.append(_state_row(state))
        a_hs.append(a_h)
        a_rs.append(a_r)
    success = state.human_cell == config.goal_cell
    if continuation == "absorb":
        while state.steps_elapsed < config.horizon:
            a_r = robot_policy(state)
            state = grid_step(replace(state, done=False), STAY, a_r, config)
            rows.append(_state_row(state))
            a_hs.append(STAY)
            a_rs.append(a_r)
        return np.stack(rows), np.array(a_hs), np.array(a_rs), success, False
    if continuation == "respawn":
        while state.steps_elapsed < config.horizon:
            free = [c for c in range(config.num_cells)
                    if c != config.goal_cell and c not in state.block_cells]
            state = replace(
                state, human_cell=free[int(rng.integers(len(free)))], done=False
            )
            # overwrite the terminal row so the stored trajectory reads
            # "goal entry leads straight to a fresh state": absorbed
            # zero-information goal states never enter the buffer
            rows[-1] = _state_row(state)
            while not state.done:
                a_h = human.act(state, rng)
                a_r = robot_policy(state)
                state = grid_step(state, a_h, a_r, config)
                rows.append(_state_row(state))
                a_hs.append(a_h)
                a_rs.append(a_r)
        return np.stack(rows), np.array(a_hs), np.array(a_rs), success, False
    return np.stack(rows), np.array(a_hs), np.array(a_rs), success, success


def evaluate_policy(
    config: GridConfig,
    human: BoltzmannGridHuman,
    robot_policy,
    episodes: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Success rate and mean steps-to-goal (successes only; NaN if none)."""
    wins, steps = 0, []
    for _ in range(episodes):
        _, a_hs, _, success, _ = rollout_episode(config, human, rng, robot_policy)
        if success:
            wins += 1
            steps.append(len(a_hs))
    rate = wins / episodes
    return rate, float(np.mean(steps)) if steps else float("nan")


def _compute_rewards(
    repr_params: ReprParams,
    featurizer: GridFeaturizer,
    fut: FutureBatch,
    reward_mode: str,
) -> torch.Tensor:
    x_phi, x_phi_prime, x_psi = featurizer.batch_inputs(fut)
    if reward_mode == REWARD_SAMPLED:
        return contrastive.esr_reward(repr_params, x_phi, x_phi_prime, x_psi)
    return contrastive.esr_reward_simplified(repr_params, x_phi, x_phi_prime)


def _oracle_empowerment(cfg: TrainConfig, critic, featurizer, human) -> float | None:
    """Exact effective empowerment of the current policy pair on small grids."""
    from .gridworld import grid_to_tabular
    from .mdp import DiscountSpec, Policy
    from .oracle import effective_empowerment

    try:
        tab = grid_to_tabular(cfg.grid)
    except ConfigurationError:
        return None
    if tab.num_states > cfg.oracle_state_bound:
        return None
    rows = np.stack([_state_row(tab.state_of(i)) for i in range(tab.num_states)])
    q = critic.q_values(featurizer.state_inputs(rows)).numpy().astype(np.float64)
    z = q / critic.alpha
    z -= z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    report = effective_empowerment(
        tab.mdp,
        human.tabular_policy(tab),
        Policy(probs),
        DiscountSpec(gamma_future=cfg.gamma_future, gamma_rl=cfg.gamma_rl),
        with_capacity=False,
    )
    return report.total_empowerment


def train_esr(config: TrainConfig, out_dir: str | Path | None = None) -> TrainArtifacts:
    """Alternate rollouts, representation updates, and critic updates; log a
    metrics CSV per epoch.  Fully reproducible from config + seed."""
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    dtype = torch.float64 if config.dtype == "float64" else torch.float32

    grid = config.grid
    featurizer = GridFeaturizer(grid, config.condition_robot_action, dtype)
    repr_params = featurizer.build_encoders(config.latent_dim, config.width, dtype)
    critic = AssistantCritic.build(
        featurizer.psi_dim, grid.num_robot_actions,
        config.critic_width or config.width, dtype,
        alpha=config.alpha, gamma_rl=config.gamma_rl,
    )
    repr_opt = torch.optim.Adam(list(repr_params.parameters()), lr=config.lr)
    # the per-step encoder weights are a high-variance estimate of the
    # log-ratio table; a slow weight average is a markedly better reward model
    ema_params = None
    if config.ema_relabel:
        ema_params = featurizer.build_encoders(config.latent_dim, config.width, dtype)
        ema_params.load_state_dicts(repr_params.state_dicts())
    critic_opt = torch.optim.Adam(
        list(critic.q_net.parameters()), lr=config.critic_lr or config.lr
    )
    buffer = EpisodeBuffer(config.replay_capacity)
    human = BoltzmannGridHuman(grid, beta=config.human_beta, gamma=config.human_gamma)

    def train_robot_policy(state: GridState) -> int:
        feat = featurizer.state_inputs(_state_row(state)[None, :])
        return assistant_action(critic, feat[0], rng, evaluate=False)

    def eval_robot_policy(state: GridState) -> int:
        feat = featurizer.state_inputs(_state_row(state)[None, :])
        return assistant_action(critic, feat[0], rng, evaluate=True)

    import time

    start_time = time.monotonic()
    truncated = False
    metrics_rows = []
    env_steps = 0
    for epoch in range(config.epochs):
        if config.max_seconds is not None and time.monotonic() - start_time > config.max_seconds:
            truncated = True
            break
        for _ in range(config.episodes_per_epoch):
            rows, a_hs, a_rs, success, terminated = rollout_episode(
                grid, human, rng, train_robot_policy,
                continuation=config.rollout_continuation,
            )
            buffer.add_episode(rows, a_hs, a_rs, terminated)
            env_steps += len(a_hs)

        repr_losses = []
        for _ in range(config.repr_updates):
            fut = buffer.sample_future(config.repr_batch, config.gamma_future, rng)
            x_phi, x_phi_prime, x_psi = featurizer.batch_inputs(fut)
            batch = ContrastiveBatch(x_phi, x_phi_prime, x_psi)
            repr_opt.zero_grad()
            loss = contrastive.repr_loss(repr_params, batch)
            if not torch.isfinite(loss):
                raise NumericError("non-finite contrastive loss during training")
            loss.backward()
            repr_opt.step()
            repr_losses.append(float(loss.item()))
            if ema_params is not None:
                with torch.no_grad():
                    for e, p in zip(ema_params.parameters(), repr_params.parameters()):
                        e.mul_(config.ema_decay).add_(p, alpha=1.0 - config.ema_decay)

        reward_params = ema_params if ema_params is not None else repr_params
        q_losses = []
        for _ in range(config.critic_updates):
            if config.reward_mode == REWARD_SAMPLED:
                s, a_h, a_r, s_next, done, g, g_w, g_idx = buffer.sample_transition_mixtures(
                    config.rl_batch, config.gamma_future, rng
                )
                cond_a_r = a_r if config.condition_robot_action else None
                if cond_a_r is not None and config.decorrelate_reward_action:
                    # the estimator's noise along the robot-action input is
                    # much larger than the true first-action effect, and a
                    # critic fed rewards scored at the taken action learns
                    # those phantom preferences; scoring at an independently
                    # resampled action leaves the state signal intact while
                    # decorrelating the noise from the decision
                    cond_a_r = rng.integers(
                        grid.num_robot_actions, size=len(a_r))
                rewards = contrastive.esr_reward_mixture(
                    reward_params,
                    featurizer._features(s, a_h, cond_a_r),
                    featurizer._features(s, None, cond_a_r),
                    featurizer.state_inputs(g),
                    g_w, g_idx, len(a_h),
                )
            else:
                s, a_h, a_r, s_next, g, done = buffer.sample_transitions(
                    config.rl_batch, config.gamma_future, rng
                )
                fut = FutureBatch(s=s, a_h=a_h, a_r=a_r, g=g, offsets=np.ones(len(a_h), dtype=int))
                rewards = _compute_rewards(reward_params, featurizer, fut, config.reward_mode)
            if config.center_rewards:
                # the estimated log-ratio carries an arbitrary constant offset;
                # with terminating episodes a positive offset pays the critic
                # for stalling, so remove the batch mean before the update
                rewards = rewards - rewards.mean()
            q_losses.append(
                soft_q_update(
                    critic, critic_opt,
                    featurizer.state_inputs(s), a_r, done,
                    featurizer.state_inputs(s_next), rewards,
                )
            )

        mi = contrastive.estimate_mi(
            reward_params, featurizer, buffer, config.repr_batch, config.gamma_future, rng
        )
        success_rate, mean_steps = evaluate_policy(
            grid, human, eval_robot_policy, config.eval_episodes, rng
        )
        oracle = ""
        if config.oracle_every and (epoch + 1) % config.oracle_every == 0:
            val = _oracle_empowerment(config, critic, featurizer, human)
            oracle = "" if val is None else f"{val:.10g}"
        metrics_rows.append(
            {
                "epoch": epoch,
                "env_steps": env_steps,
                "repr_loss": f"{np.mean(repr_losses):.10g}",
                "mi_estimate": f"{mi:.10g}",
                "oracle_empowerment": oracle,
                "success_rate": f"{success_rate:.10g}",
                "mean_steps_to_goal": "" if np.isnan(mean_steps) else f"{mean_steps:.10g}",
                "q_loss": f"{np.mean(q_losses):.10g}",
            }
        )

    if ema_params is not None:
        # ship the averaged weights: they are the estimator of record
        repr_params.load_state_dicts(ema_params.state_dicts())

    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        write_metrics(metrics_path, metrics_rows)
        contrastive.save_repr_checkpoint(
            out_dir / "repr.pt", repr_params,
            extra={"train_config": config.__dict__ | {"grid": grid.__dict__}},
        )
        save_critic_checkpoint(out_dir / "critic.pt", critic)
    return TrainArtifacts(
        critic, repr_params, featurizer, buffer, metrics_path, metrics_rows, truncated
    )


def write_metrics(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def save_critic_checkpoint(path, critic: AssistantCritic) -> None:
    torch.save(
        {
            "version": contrastive.CHECKPOINT_VERSION,
            "state": critic.q_net.state_dict(),
            "num_actions": critic.num_actions,
            "alpha": critic.alpha,
            "gamma_rl": critic.gamma_rl,
        },
        path,
    )


def load_critic_checkpoint(path, critic: AssistantCritic) -> None:
    payload = torch.load(path, weights_only=False)
    critic.q_net.load_state_dict(payload["state"])
    critic.target_net.load_state_dict(payload["state"])
