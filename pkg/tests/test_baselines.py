import numpy as np
import pytest

from esrlab.baselines import (
    AveConfig,
    OracleEmpowermentAssistant,
    _apply_robot,
    _final_position_variance,
    ave_action,
    random_action,
)
from esrlab.errors import ConfigurationError, UsageError
from esrlab.gridworld import RIGHT, STAY, GridConfig, GridState, grid_step

CFG = GridConfig()


class TestAveConfig:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            AveConfig(num_rollouts=1)
        with pytest.raises(ConfigurationError):
            AveConfig(rollout_horizon=0)


class TestApplyRobot:
    def test_matches_grid_step(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            from esrlab.gridworld import initial_state

            s = initial_state(CFG, rng)
            a_r = int(rng.integers(CFG.num_robot_actions))
            expected = grid_step(s, STAY, a_r, CFG).block_cells
            assert _apply_robot(s, a_r, CFG) == expected


class TestVariance:
    def test_fully_walled_human_has_zero_variance(self):
        # a 1x3 corridor with the human boxed in by the block
        cfg = GridConfig(width=3, height=1, num_blocks=1, goal_cell=2)
        actions = np.random.default_rng(1).integers(0, 5, size=(32, 6))
        v = _final_position_variance(0, (1,), cfg, actions)
        assert v == 0.0

    def test_open_room_beats_boxed_corner(self):
        actions = np.random.default_rng(2).integers(0, 5, size=(128, 8))
        open_v = _final_position_variance(12, (), GridConfig(num_blocks=0), actions)
        boxed_v = _final_position_variance(0, (1, 5), CFG, actions)
        assert open_v > boxed_v


class TestAveAction:
    def test_frees_the_boxed_human(self):
        # human at the corner, blocks at 1 and 5 wall it in; moving either
        # block away raises reachable-set variance, no-op keeps it at zero
        s = GridState(human_cell=0, block_cells=(1, 5))
        a = ave_action(s, AveConfig(num_rollouts=128, rollout_horizon=8),
                       np.random.default_rng(3), CFG)
        assert a != 0
        nxt = grid_step(s, STAY, a, CFG)
        assert nxt.block_cells != (1, 5)

    def test_exact_ties_pick_noop(self):
        # no blocks: every action is the no-op, all scores identical
        cfg = GridConfig(num_blocks=0)
        s = GridState(human_cell=12, block_cells=())
        a = ave_action(s, AveConfig(), np.random.default_rng(4), cfg)
        assert a == 0

    def test_done_state_rejected(self):
        s = GridState(human_cell=24, block_cells=(0, 1), done=True)
        with pytest.raises(UsageError):
            ave_action(s, AveConfig(), np.random.default_rng(5), CFG)


class TestRandomAction:
    def test_uniform_coverage(self):
        rng = np.random.default_rng(6)
        s = GridState(human_cell=0, block_cells=(1, 5))
        draws = np.array([random_action(s, rng, CFG) for _ in range(5000)])
        counts = np.bincount(draws, minlength=9)
        assert counts.min() > 0
        assert abs(counts / 5000 - 1 / 9).max() < 0.03


class TestOracleEmpowermentAssistant:
    def test_act_prefers_freeing_move(self):
        cfg = GridConfig(width=3, height=3, num_blocks=1, goal_cell=8)
        assistant = OracleEmpowermentAssistant(cfg)
        # human at corner 0, block at 1 pinning it against the wall
        s = GridState(human_cell=0, block_cells=(1,))
        a = assistant.act(s)
        nxt = grid_step(s, STAY, a, cfg)
        # the chosen action should never reduce the human's options: the block
        # either moves away or the robot idles
        assert a == 0 or nxt.block_cells != (1,)

    def test_actions_in_range(self):
        cfg = GridConfig(width=3, height=3, num_blocks=1, goal_cell=8)
        assistant = OracleEmpowermentAssistant(cfg)
        rng = np.random.default_rng(7)
        from esrlab.gridworld import initial_state

        for _ in range(20):
            s = initial_state(cfg, rng)
            assert 0 <= assistant.act(s) < cfg.num_robot_actions
