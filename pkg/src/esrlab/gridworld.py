"""Obstacle-gridworld assistance benchmark.

A human navigates to a goal cell among movable blocks; the robot may move one
block one step per tick.  Cells are indexed row-major: cell = y * width + x.

Tick semantics (fixed, documented): the robot's block move is applied first,
then the human's move.  A block move that would leave the grid or enter the
human's cell, the goal cell, or another block resolves to no-op; a human move
into a block cell or off-grid resolves to stay.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, UsageError
from .mdp import MAX_DENSE_STATES, TabularMDP

# human actions
UP, DOWN, LEFT, RIGHT, STAY = 0, 1, 2, 3, 4
HUMAN_ACTIONS = 5
# (dx, dy) per direction, indexed by UP..RIGHT
_DELTAS = ((0, -1), (0, 1), (-1, 0), (1, 0))


@dataclass(frozen=True)
class GridConfig:
    width: int = 5
    height: int = 5
    num_blocks: int = 2
    goal_cell: int = 24
    horizon: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigurationError("grid dimensions must be positive")
        if self.num_blocks < 0:
            raise ConfigurationError("num_blocks must be >= 0")
        if self.num_blocks + 2 > self.width * self.height:
            raise ConfigurationError("grid too small for blocks + human + goal")
        if not 0 <= self.goal_cell < self.width * self.height:
            raise ConfigurationError("goal_cell out of bounds")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be positive")

    @property
    def num_cells(self) -> int:
        return self.width * self.height

    @property
    def num_robot_actions(self) -> int:
        # no-op plus (block, direction) pairs
        return 4 * self.num_blocks + 1


@dataclass(frozen=True)
class GridState:
    human_cell: int
    block_cells: tuple[int, ...]
    steps_elapsed: int = 0
    done: bool = False

    def validate(self, config: GridConfig) -> None:
        cells = (self.human_cell, *self.block_cells)
        if any(not 0 <= c < config.num_cells for c in cells):
            raise ConfigurationError("cell index out of bounds")
        if len(self.block_cells) != config.num_blocks:
            raise ConfigurationError("wrong number of blocks")
        if len(set(self.block_cells)) != len(self.block_cells):
            raise ConfigurationError("block cells must be pairwise distinct")
        if self.human_cell in self.block_cells:
            raise ConfigurationError("human cell occupied by a block")
        if config.goal_cell in self.block_cells:
            raise ConfigurationError("goal cell occupied by a block")


def _move(cell: int, direction: int, config: GridConfig) -> int | None:
    """Target cell for a directional move, or None when it leaves the grid."""
    x, y = cell % config.width, cell // config.width
    dx, dy = _DELTAS[direction]
    nx, ny = x + dx, y + dy
    if not (0 <= nx < config.width and 0 <= ny < config.height):
        return None
    return ny * config.width + nx


def initial_state(config: GridConfig, rng: np.random.Generator) -> GridState:
    """Uniform collision-free placement of human and blocks; goal is fixed."""
    free = [c for c in range(config.num_cells) if c != config.goal_cell]
    picks = rng.choice(len(free), size=config.num_blocks + 1, replace=False)
    cells = [free[i] for i in picks]
    return GridState(human_cell=cells[0], block_cells=tuple(cells[1:]))


def grid_step(state: GridState, a_h: int, a_r: int, config: GridConfig) -> GridState:
    """Deterministic tick: robot block move first, then human move."""
    if state.done:
        raise UsageError("cannot step a done state")
    if not 0 <= a_h < HUMAN_ACTIONS:
        raise ConfigurationError(f"human action {a_h} out of range")
    if not 0 <= a_r < config.num_robot_actions:
        raise ConfigurationError(f"robot action {a_r} out of range")

    blocks = list(state.block_cells)
    if a_r > 0:
        block_idx, direction = divmod(a_r - 1, 4)
        target = _move(blocks[block_idx], direction, config)
        occupied = set(blocks) | {state.human_cell, config.goal_cell}
        if target is not None and target not in occupied:
            blocks[block_idx] = target

    human = state.human_cell
    if a_h != STAY:
        target = _move(human, a_h, config)
        if target is not None and target not in blocks:
            human = target

    steps = state.steps_elapsed + 1
    done = human == config.goal_cell or steps >= config.horizon
    return GridState(human_cell=human, block_cells=tuple(blocks), steps_elapsed=steps, done=done)


# ---------------------------------------------------------------------------
# exact enumeration


def _enumerate_states(config: GridConfig):
    """All (human_cell, block tuple) pairs satisfying the state invariants.

    Blocks are ordered (the robot addresses them by index).
    """
    from itertools import permutations

    states = []
    for human in range(config.num_cells):
        candidates = [c for c in range(config.num_cells) if c != config.goal_cell and c != human]
        for blocks in permutations(candidates, config.num_blocks):
            states.append((human, blocks))
    return states


class GridTabular:
    """Bijection between GridState and TabularMDP state indices."""

    def __init__(self, config: GridConfig, mdp: TabularMDP, states):
        self.config = config
        self.mdp = mdp
        self._states = states
        self._index = {s: i for i, s in enumerate(states)}

    @property
    def num_states(self) -> int:
        return len(self._states)

    def index_of(self, state: GridState) -> int:
        return self._index[(state.human_cell, tuple(state.block_cells))]

    def state_of(self, index: int) -> GridState:
        human, blocks = self._states[index]
        return GridState(human_cell=human, block_cells=blocks, done=human == self.config.goal_cell)


def grid_to_tabular(config: GridConfig) -> GridTabular:
    """Enumerate the grid into a TabularMDP; goal states are absorbing.

    The episode horizon is not part of the tabular state: the oracle MDP is
    the infinite-horizon chain the occupancy math assumes.
    """
    states = _enumerate_states(config)
    n = len(states)
    if n > MAX_DENSE_STATES:
        raise ConfigurationError(
            f"{n} enumerable states exceeds the exact-enumeration bound of {MAX_DENSE_STATES}"
        )
    index = {s: i for i, s in enumerate(states)}
    n_ar = config.num_robot_actions
    t = np.zeros((n, HUMAN_ACTIONS, n_ar, n))
    for i, (human, blocks) in enumerate(states):
        if human == config.goal_cell:
            t[i, :, :, i] = 1.0  # absorbing
            continue
        st = GridState(human_cell=human, block_cells=blocks)
        for ah in range(HUMAN_ACTIONS):
            for ar in range(n_ar):
                nxt = grid_step(st, ah, ar, config)
                t[i, ah, ar, index[(nxt.human_cell, nxt.block_cells)]] = 1.0
    # uniform over valid non-goal starts, matching initial_state's placement rule
    p0 = np.array([1.0 if h != config.goal_cell else 0.0 for h, _ in states])
    p0 /= p0.sum()
    return GridTabular(config, TabularMDP(transition=t, initial_dist=p0), states)


# ---------------------------------------------------------------------------
# featurization


def feature_length(config: GridConfig, with_human_action: bool, with_robot_action: bool) -> int:
    channels = 3
    if with_human_action:
        channels += HUMAN_ACTIONS
    if with_robot_action:
        channels += config.num_robot_actions
    return channels * config.num_cells


def featurize(
    state: GridState,
    config: GridConfig,
    a_h: int | None = None,
    a_r: int | None = None,
) -> np.ndarray:
    """Flat channel-grid encoding: human one-hot, goal one-hot, block occupancy,
    plus a constant all-ones plane for each selected action when provided."""
    out = featurize_batch(
        np.array([state.human_cell]),
        np.array([state.block_cells], dtype=int).reshape(1, -1),
        config,
        None if a_h is None else np.array([a_h]),
        None if a_r is None else np.array([a_r]),
    )
    return out[0]


def featurize_batch(
    human_cells: np.ndarray,
    block_cells: np.ndarray,
    config: GridConfig,
    a_h: np.ndarray | None = None,
    a_r: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized featurize: human_cells (B,), block_cells (B, N)."""
    b = human_cells.shape[0]
    ncells = config.num_cells
    channels = [np.zeros((b, ncells), dtype=np.float64) for _ in range(3)]
    channels[0][np.arange(b), human_cells] = 1.0
    channels[1][:, config.goal_cell] = 1.0
    if config.num_blocks > 0:
        rows = np.repeat(np.arange(b), config.num_blocks)
        channels[2][rows, block_cells.reshape(-1)] = 1.0
    planes = [np.concatenate(channels, axis=1)]
    if a_h is not None:
        onehot = np.zeros((b, HUMAN_ACTIONS))
        onehot[np.arange(b), a_h] = 1.0
        planes.append(np.repeat(onehot, ncells, axis=1).reshape(b, -1))
    if a_r is not None:
        onehot = np.zeros((b, config.num_robot_actions))
        onehot[np.arange(b), a_r] = 1.0
        planes.append(np.repeat(onehot, ncells, axis=1).reshape(b, -1))
    return np.concatenate(planes, axis=1)


# ---------------------------------------------------------------------------
# layout serialization (shared by the harness and the play service)


def layout_to_json(state: GridState, config: GridConfig) -> str:
    return json.dumps(
        {
            "width": config.width,
            "height": config.height,
            "goal": config.goal_cell,
            "human": state.human_cell,
            "blocks": list(state.block_cells),
            "seed": config.seed,
        }
    )


def layout_from_json(payload: str, horizon: int = 40) -> tuple[GridConfig, GridState]:
    obj = json.loads(payload)
    config = GridConfig(
        width=obj["width"],
        height=obj["height"],
        num_blocks=len(obj["blocks"]),
        goal_cell=obj["goal"],
        horizon=horizon,
        seed=obj.get("seed", 0),
    )
    state = GridState(human_cell=obj["human"], block_cells=tuple(obj["blocks"]))
    state.validate(config)
    return config, state
