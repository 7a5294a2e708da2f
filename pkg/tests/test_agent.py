import numpy as np
import pytest
import torch

from esrlab.agent import (
    METRICS_COLUMNS,
    REWARD_SIMPLIFIED,
    AssistantCritic,
    TrainConfig,
    assistant_action,
    evaluate_policy,
    load_critic_checkpoint,
    rollout_episode,
    save_critic_checkpoint,
    soft_q_update,
    train_esr,
    write_metrics,
)
from esrlab.errors import ConfigurationError
from esrlab.gridworld import GridConfig
from esrlab.human import BoltzmannGridHuman

CORRIDOR = GridConfig(width=3, height=1, num_blocks=0, goal_cell=2, horizon=10)
TINY = GridConfig(width=3, height=3, num_blocks=1, goal_cell=8, horizon=12)


def tiny_train_config(**overrides):
    kw = dict(
        grid=TINY,
        epochs=2,
        episodes_per_epoch=2,
        repr_updates=2,
        critic_updates=2,
        repr_batch=16,
        rl_batch=16,
        latent_dim=8,
        width=16,
        eval_episodes=2,
        oracle_every=1,
        seed=0,
    )
    kw.update(overrides)
    return TrainConfig(**kw)


class TestCritic:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            AssistantCritic.build(4, 3, width=8, alpha=0.0)
        with pytest.raises(ConfigurationError):
            AssistantCritic.build(4, 3, width=8, gamma_rl=1.0)

    def test_target_synced_at_init(self):
        critic = AssistantCritic.build(4, 3, width=8)
        x = torch.zeros(1, 4, dtype=torch.float64)
        assert torch.equal(critic.q_values(x), critic.target_net(x).detach())

    def test_constant_reward_fixed_point(self):
        # with r = 1 everywhere the soft-Q fixed point is
        # (1 + gamma * alpha * log|A|) / (1 - gamma) for all actions
        torch.manual_seed(0)
        critic = AssistantCritic.build(
            1, 3, width=16, alpha=0.05, gamma_rl=0.5, target_interval=64
        )
        opt = torch.optim.Adam(critic.q_net.parameters(), lr=1e-2)
        x = torch.zeros(32, 1, dtype=torch.float64)
        a = np.tile(np.arange(3), 11)[:32]
        done = np.zeros(32, dtype=bool)
        r = torch.ones(32, dtype=torch.float64)
        for _ in range(2000):
            loss = soft_q_update(critic, opt, x, a, done, x, r)
        target = (1.0 + 0.5 * 0.05 * np.log(3.0)) / 0.5
        q = critic.q_values(x[:1])[0].numpy()
        assert loss < 1e-4
        np.testing.assert_allclose(q, target, atol=0.05)

    def test_done_targets_are_reward_only(self):
        critic = AssistantCritic.build(2, 3, width=8, alpha=0.05, gamma_rl=0.9)
        opt = torch.optim.SGD(critic.q_net.parameters(), lr=0.0)
        x = torch.zeros(4, 2, dtype=torch.float64)
        with torch.no_grad():
            q0 = critic.q_net(x).gather(1, torch.zeros(4, 1, dtype=torch.long)).squeeze(1)
        r = torch.full((4,), 2.0, dtype=torch.float64)
        # with lr 0 the loss equals the mean squared target error at init
        loss = soft_q_update(critic, opt, x, np.zeros(4, int), np.ones(4, bool), x, r)
        expected = float(((q0 - r) ** 2).mean())
        assert abs(loss - expected) < 1e-10

    def test_target_refresh_interval(self):
        critic = AssistantCritic.build(2, 3, width=8, target_interval=2)
        opt = torch.optim.Adam(critic.q_net.parameters(), lr=1e-2)
        x = torch.zeros(4, 2, dtype=torch.float64)
        r = torch.ones(4, dtype=torch.float64)
        soft_q_update(critic, opt, x, np.zeros(4, int), np.zeros(4, bool), x, r)
        probe = torch.zeros(1, 2, dtype=torch.float64)
        assert not torch.equal(critic.q_net(probe).detach(), critic.target_net(probe).detach())
        soft_q_update(critic, opt, x, np.zeros(4, int), np.zeros(4, bool), x, r)
        assert torch.equal(critic.q_net(probe).detach(), critic.target_net(probe).detach())


class TestActionSelection:
    def test_eval_tie_breaks_to_lowest_index(self):
        critic = AssistantCritic.build(2, 4, width=8)
        with torch.no_grad():
            for p in critic.q_net.parameters():
                p.zero_()
        a = assistant_action(critic, torch.zeros(2, dtype=torch.float64),
                             np.random.default_rng(0), evaluate=True)
        assert a == 0

    def test_train_sampling_is_seeded(self):
        critic = AssistantCritic.build(2, 4, width=8)
        feat = torch.zeros(2, dtype=torch.float64)
        a1 = assistant_action(critic, feat, np.random.default_rng(3))
        a2 = assistant_action(critic, feat, np.random.default_rng(3))
        assert a1 == a2

    def test_train_sampling_follows_softmax(self):
        critic = AssistantCritic.build(2, 2, width=8, alpha=1.0)
        with torch.no_grad():
            for p in critic.q_net.parameters():
                p.zero_()
            critic.q_net.net[-1].bias.copy_(torch.tensor([np.log(3.0), 0.0]))
        rng = np.random.default_rng(4)
        feat = torch.zeros(2, dtype=torch.float64)
        draws = [assistant_action(critic, feat, rng) for _ in range(3000)]
        assert abs(np.mean(np.array(draws) == 0) - 0.75) < 0.03


class TestRollouts:
    def test_sharp_human_reaches_goal(self):
        human = BoltzmannGridHuman(CORRIDOR, beta=50.0)
        rows, a_hs, a_rs, success, terminated = rollout_episode(
            CORRIDOR, human, np.random.default_rng(0), lambda s: 0
        )
        assert success and terminated
        assert rows.shape == (len(a_hs) + 1, 1)
        assert rows[-1, 0] == 2

    def test_evaluate_policy_stats(self):
        human = BoltzmannGridHuman(CORRIDOR, beta=50.0)
        rate, steps = evaluate_policy(CORRIDOR, human, lambda s: 0, 10,
                                      np.random.default_rng(1))
        assert rate > 0.9
        assert steps < 4.0


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            tiny_train_config(reward_mode="bogus")
        with pytest.raises(ConfigurationError):
            tiny_train_config(episodes_per_epoch=0)

    def test_smoke_and_artifacts(self, tmp_path):
        out = tmp_path / "run"
        art = train_esr(tiny_train_config(), out)
        assert not art.truncated
        assert len(art.metrics_rows) == 2
        assert (out / "metrics.csv").exists()
        assert (out / "repr.pt").exists()
        assert (out / "critic.pt").exists()
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == ",".join(METRICS_COLUMNS)
        row = art.metrics_rows[-1]
        assert row["oracle_empowerment"] != ""
        assert float(row["repr_loss"]) > 0.0
        assert np.isfinite(art.final_success())

    def test_deterministic_metrics_bytes(self, tmp_path):
        a = train_esr(tiny_train_config(oracle_every=0), tmp_path / "a")
        b = train_esr(tiny_train_config(oracle_every=0), tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (
            tmp_path / "b" / "metrics.csv"
        ).read_bytes()

    def test_simplified_reward_mode_runs(self, tmp_path):
        art = train_esr(
            tiny_train_config(reward_mode=REWARD_SIMPLIFIED, oracle_every=0, epochs=1),
            tmp_path / "simp",
        )
        assert len(art.metrics_rows) == 1

    def test_wall_clock_truncation(self, tmp_path):
        art = train_esr(tiny_train_config(max_seconds=0.0), tmp_path / "t")
        assert art.truncated
        assert art.metrics_rows == []

    def test_critic_checkpoint_round_trip(self, tmp_path):
        critic = AssistantCritic.build(4, 3, width=8)
        path = tmp_path / "critic.pt"
        save_critic_checkpoint(path, critic)
        other = AssistantCritic.build(4, 3, width=8)
        load_critic_checkpoint(path, other)
        x = torch.ones(1, 4, dtype=torch.float64)
        assert torch.equal(critic.q_values(x), other.q_values(x))


class TestMetricsFile:
    def test_newline_convention(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics(path, [dict.fromkeys(METRICS_COLUMNS, "1")])
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.endswith(b"\n")
