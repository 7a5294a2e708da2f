"""Comparison assistants: random-rollout variance proxy and a random controller."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError
from .gridworld import HUMAN_ACTIONS, STAY, GridConfig, GridState, _move


@dataclass(frozen=True)
class AveConfig:
    """Variance statistic: trace of the coordinate covariance of the human's
    final cell over uniform-random-human rollouts with the robot idle."""

    num_rollouts: int = 64
    rollout_horizon: int = 10

    def __post_init__(self):
        if self.num_rollouts < 2:
            raise ConfigurationError("num_rollouts must be >= 2")
        if self.rollout_horizon < 1:
            raise ConfigurationError("rollout_horizon must be >= 1")


def _apply_robot(state: GridState, a_r: int, config: GridConfig) -> tuple[int, ...]:
    """Block layout after a candidate robot action (same legality as grid_step)."""
    blocks = list(state.block_cells)
    if a_r > 0:
        block_idx, direction = divmod(a_r - 1, 4)
        target = _move(blocks[block_idx], direction, config)
        occupied = set(blocks) | {state.human_cell, config.goal_cell}
        if target is not None and target not in occupied:
            blocks[block_idx] = target
    return tuple(blocks)


def _human_move_table(blocks: tuple[int, ...], config: GridConfig) -> np.ndarray:
    """next_cell[cell, action] for a static block layout."""
    blocked = set(blocks)
    table = np.empty((config.num_cells, HUMAN_ACTIONS), dtype=np.int64)
    for c in range(config.num_cells):
        for a in range(HUMAN_ACTIONS):
            if a == STAY:
                table[c, a] = c
            else:
                t = _move(c, a, config)
                table[c, a] = c if t is None or t in blocked else t
    return table


def _final_position_variance(
    start: int, blocks: tuple[int, ...], config: GridConfig, actions: np.ndarray
) -> float:
    table = _human_move_table(blocks, config)
    pos = np.full(actions.shape[0], start, dtype=np.int64)
    for t in range(actions.shape[1]):
        pos = table[pos, actions[:, t]]
    x = pos % config.width
    y = pos // config.width
    return float(x.var() + y.var())


def ave_action(
    state: GridState, config: AveConfig, rng: np.random.Generator, grid: GridConfig
) -> int:
    """Score each candidate robot action by final-state positional variance of
    random-human rollouts (robot idle), then argmax with lowest-index ties.

    Common random action sequences are shared across candidates so identical
    reachable sets score identically.
    """
    if state.done:
        raise UsageError("cannot act in a done state")
    actions = rng.integers(0, HUMAN_ACTIONS, size=(config.num_rollouts, config.rollout_horizon))
    scores = np.array(
        [
            _final_position_variance(state.human_cell, _apply_robot(state, a_r, grid), grid, actions)
            for a_r in range(grid.num_robot_actions)
        ]
    )
    return int(np.argmax(scores))


def random_action(state: GridState, rng: np.random.Generator, grid: GridConfig) -> int:
    """Uniform over the 4N+1 robot actions."""
    return int(rng.integers(0, grid.num_robot_actions))


class OracleEmpowermentAssistant:
    """Greedy one-step controller on exact per-state conditional MI.

    Only valid for configurations small enough to enumerate exactly.  The MI
    vector is computed once under the Boltzmann human and an idle robot; each
    step picks the robot action maximizing the expected MI of the next state.
    """

    def __init__(self, grid: GridConfig, human_beta: float = 5.0, gamma_future: float = 0.9):
        from .gridworld import grid_to_tabular
        from .human import BoltzmannGridHuman
        from .mdp import DiscountSpec, Policy
        from .oracle import effective_empowerment

        self.tab = grid_to_tabular(grid)
        self.grid = grid
        human = BoltzmannGridHuman(grid, beta=human_beta)
        self.pi_h = human.tabular_policy(self.tab)
        idle = np.zeros((self.tab.num_states, grid.num_robot_actions))
        idle[:, 0] = 1.0
        report = effective_empowerment(
            self.tab.mdp, self.pi_h, Policy(idle),
            DiscountSpec(gamma_future=gamma_future), with_capacity=False,
        )
        self.mi = report.per_state_mi

    def act(self, state: GridState) -> int:
        s = self.tab.index_of(state)
        # expected next-state MI under the human's action distribution
        scores = np.einsum(
            "h,hrt,t->r", self.pi_h.probs[s], self.tab.mdp.transition[s], self.mi
        )
        return int(np.argmax(scores))
