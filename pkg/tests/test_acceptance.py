"""Release gate: exact-oracle equivalence, theory bounds, estimator fidelity,
benchmark direction-of-effect, determinism, and service replay.

The benchmark tests read cached experiment outputs from results/ (produced by
scripts/run_benchmarks.py).  Every other test is self-contained.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from esrlab.agent import TrainConfig, train_esr
from esrlab.baselines import random_action
from esrlab.buffer import FutureBatch
from esrlab.contrastive import ContrastiveBatch, TabularFeaturizer, esr_reward, repr_loss
from esrlab.gridworld import GridConfig, grid_step, initial_state
from esrlab.harness import ExperimentConfig, run_experiment
from esrlab.mdp import (
    DiscountSpec,
    Policy,
    discounted_occupancy,
    marginal_chain,
    random_mdp,
)
from esrlab.oracle import (
    blahut_arimoto,
    conditional_mi,
    effective_empowerment,
    kl_divergence,
    polytope_stats,
    verify_entropy_bound,
    verify_theorem_bound,
)
from esrlab.service import create_app

from mc_oracles import mc_joint_action_future, mc_occupancy, plug_in_mi

RESULTS_DIR = Path(__file__).resolve().parent.parent / "results"


def _random_setup(rng, num_states=None):
    n = int(num_states or rng.integers(3, 11))
    ah = int(rng.integers(2, 5))
    ar = int(rng.integers(1, 4))
    mdp = random_mdp(n, ah, ar, rng, smoothing=0.1)
    pi_h = Policy(np.apply_along_axis(lambda r: r / r.sum(), 1, rng.random((n, ah)) + 0.2))
    pi_r = Policy(np.apply_along_axis(lambda r: r / r.sum(), 1, rng.random((n, ar)) + 0.2))
    return mdp, pi_h, pi_r


class TestOracleMatchesMonteCarlo:
    def test_occupancy_and_mi_within_three_standard_errors(self):
        start = time.monotonic()
        rng = np.random.default_rng(20240817)
        occ_samples, mi_samples = 40_000, 10_000
        for trial in range(20):
            mdp, pi_h, pi_r = _random_setup(rng)
            gamma = float(rng.uniform(0.5, 0.9))
            spec = DiscountSpec(gamma_future=gamma)
            state = int(rng.integers(mdp.num_states))
            a_h = int(rng.integers(mdp.num_human_actions))

            exact = discounted_occupancy(mdp, pi_h, pi_r, spec, condition=(state, a_h))
            est = mc_occupancy(mdp, pi_h, pi_r, gamma, occ_samples, rng,
                               start=state, a_h=a_h)
            se = np.sqrt(np.maximum(est * (1 - est), 1e-12) / occ_samples)
            assert np.all(np.abs(est - exact) <= 3 * se + 1e-9), f"trial {trial}"

            exact_mi = conditional_mi(mdp, pi_h, pi_r, spec, state)
            joint = mc_joint_action_future(mdp, pi_h, pi_r, gamma, state, mi_samples, rng)
            est_mi = plug_in_mi(joint)
            # delta-method error of the plug-in estimate: variance of the
            # per-sample pointwise log-ratio, plus the (A-1)(S-1)/2n bias
            pa = joint.sum(axis=1, keepdims=True)
            ps = joint.sum(axis=0, keepdims=True)
            mask = joint > 0
            logratio = np.log(joint[mask] / (pa @ ps)[mask])
            var = float(joint[mask] @ (logratio - est_mi) ** 2)
            se_mi = np.sqrt(var / mi_samples)
            bias = (mdp.num_human_actions - 1) * (mdp.num_states - 1) / (2 * mi_samples)
            assert abs(est_mi - exact_mi) <= 3 * se_mi + bias + 1e-9, f"trial {trial}"
        assert time.monotonic() - start < 60.0


class TestInformationGeometryIdentities:
    def test_mi_is_exactly_the_mean_of_kls(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            mdp, pi_h, pi_r = _random_setup(rng)
            spec = DiscountSpec(gamma_future=0.8)
            for s in range(mdp.num_states):
                kls, _ = polytope_stats(mdp, pi_h, pi_r, spec, s)
                mean_kl = float(pi_h.probs[s] @ kls)
                assert abs(mean_kl - conditional_mi(mdp, pi_h, pi_r, spec, s)) < 1e-12

    def test_mi_never_exceeds_dmax(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            mdp, pi_h, pi_r = _random_setup(rng)
            report = effective_empowerment(
                mdp, pi_h, pi_r, DiscountSpec(gamma_future=0.85), with_capacity=False
            )
            assert np.all(report.per_state_mi <= report.per_state_dmax + 1e-12)

    def test_mi_equals_dmax_at_capacity_achieving_input(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            channel = rng.random((4, 6)) + 0.05
            channel /= channel.sum(axis=1, keepdims=True)
            capacity, q = blahut_arimoto(channel, tol=1e-12)
            avg = q @ channel
            kls = np.array([kl_divergence(channel[a], avg) for a in range(4)])
            mi_at_q = float(q @ kls)
            assert abs(mi_at_q - kls.max()) <= 1e-6
            assert abs(mi_at_q - capacity) <= 1e-9

    def test_binary_symmetric_channel_capacity_closed_form(self):
        for p in (0.05, 0.11, 0.25, 0.4):
            channel = np.array([[1 - p, p], [p, 1 - p]])
            capacity, _ = blahut_arimoto(channel, tol=1e-12)
            h = -p * np.log(p) - (1 - p) * np.log(1 - p)
            assert abs(capacity - (np.log(2) - h)) < 1e-6


class TestEntropyLowerBound:
    def test_full_sweep_holds(self):
        start = time.monotonic()
        rng = np.random.default_rng(6)
        cases = 0
        for k in (2, 3, 5, 8, 16, 64):
            for beta in np.linspace(0.0, 8.0, 18):
                # worst-case logits plus random draws in the unit box
                assert verify_entropy_bound(k, float(beta))["holds"]
                cases += 1
                for _ in range(95):
                    logits = rng.random(k)
                    assert verify_entropy_bound(k, float(beta), logits)["holds"]
                    cases += 1
        assert cases >= 10_000
        assert time.monotonic() - start < 10.0


class TestEmpowermentReturnBound:
    def test_sqrt_empowerment_below_scaled_return(self):
        start = time.monotonic()
        rng = np.random.default_rng(7)
        margins = []
        for trial in range(20):
            mdp = random_mdp(5, int(rng.integers(2, 5)), int(rng.integers(1, 4)),
                             rng, smoothing=0.3)
            pi_r = Policy.uniform(5, mdp.num_robot_actions)
            result = verify_theorem_bound(
                mdp, pi_r, beta=2.0, gamma=0.999, num_reward_samples=200, rng=rng
            )
            assert result["margin"] >= 0.0, f"trial {trial}: {result}"
            margins.append(result["margin"])
        print(f"\nbound margins: min={min(margins):.4g} median={np.median(margins):.4g}")
        assert time.monotonic() - start < 1800.0


class TestEstimatorFidelity:
    """Tabular-capacity encoders on a fully enumerated 3-state MDP must
    recover the exact occupancy log-ratios up to one additive constant."""

    N, AH, AR = 3, 2, 2
    GAMMA = 0.7

    def _exact_tables(self, mdp, pi_h, pi_r):
        n = self.N
        chain = marginal_chain(mdp, pi_h, pi_r)
        inv = np.linalg.inv(np.eye(n) - self.GAMMA * chain)
        rho = (1 - self.GAMMA) * np.einsum("shrt,tg->shrg", mdp.transition, inv)
        rho_bar = np.einsum("sh,shrg->srg", pi_h.probs, rho)
        return rho, rho_bar

    def _setup(self):
        rng = np.random.default_rng(11)
        mdp = random_mdp(self.N, self.AH, self.AR, rng, smoothing=0.3)
        pi_h = Policy(np.array([[0.7, 0.3], [0.4, 0.6], [0.55, 0.45]]))
        pi_r = Policy(np.array([[0.5, 0.5], [0.3, 0.7], [0.6, 0.4]]))
        rho, rho_bar = self._exact_tables(mdp, pi_h, pi_r)
        return rng, mdp, pi_h, pi_r, rho, rho_bar

    def _sample_batch(self, rng, pi_h, pi_r, rho, size):
        s = rng.integers(self.N, size=size)
        a_h = np.array([rng.choice(self.AH, p=pi_h.probs[x]) for x in s])
        a_r = np.array([rng.choice(self.AR, p=pi_r.probs[x]) for x in s])
        g = np.array([rng.choice(self.N, p=rho[s[i], a_h[i], a_r[i]])
                      for i in range(size)])
        return FutureBatch(s=s[:, None], a_h=a_h, a_r=a_r, g=g[:, None],
                           offsets=np.ones(size, dtype=int))

    def test_log_ratio_recovery_and_mi(self):
        start = time.monotonic()
        torch.manual_seed(0)
        rng, mdp, pi_h, pi_r, rho, rho_bar = self._setup()
        feat = TabularFeaturizer(self.N, self.AH, self.AR)
        params = feat.build_encoders(latent_dim=8, dtype=torch.float64)
        opt = torch.optim.Adam(params.parameters(), lr=5e-3)
        for _ in range(4000):
            batch = self._sample_batch(rng, pi_h, pi_r, rho, 512)
            x_phi, x_phi_prime, x_psi = feat.batch_inputs(batch)
            opt.zero_grad()
            loss = repr_loss(params, ContrastiveBatch(x_phi, x_phi_prime, x_psi))
            loss.backward()
            opt.step()

        # enumerate every (s, a_h, a_r, g) cell and regress estimate on truth
        cells = [(s, ah, ar, g)
                 for s in range(self.N) for ah in range(self.AH)
                 for ar in range(self.AR) for g in range(self.N)]
        s, a_h, a_r, g = (np.array(v) for v in zip(*cells))
        fut = FutureBatch(s=s[:, None], a_h=a_h, a_r=a_r, g=g[:, None],
                          offsets=np.ones(len(s), dtype=int))
        x_phi, x_phi_prime, x_psi = feat.batch_inputs(fut)
        est = esr_reward(params, x_phi, x_phi_prime, x_psi).numpy()
        truth = np.log(rho[s, a_h, a_r, g]) - np.log(rho_bar[s, a_r, g])

        slope, intercept = np.polyfit(truth, est, 1)
        resid = est - (slope * truth + intercept)
        r2 = 1.0 - resid.var() / est.var()
        assert 0.9 <= slope <= 1.1, f"slope {slope:.4f}"
        assert r2 >= 0.95, f"R^2 {r2:.4f}"

        # joint-weighted mean of the estimate vs the exact conditional MI
        w = (np.ones(self.N) / self.N)[s] * pi_h.probs[s, a_h] \
            * pi_r.probs[s, a_r] * rho[s, a_h, a_r, g]
        mi_est = float(w @ est)
        mi_true = float(w @ truth)
        assert abs(mi_est - mi_true) <= 0.15, f"{mi_est:.4f} vs {mi_true:.4f}"
        assert time.monotonic() - start < 900.0

    def test_loss_gradients_match_finite_differences(self):
        torch.manual_seed(1)
        rng, mdp, pi_h, pi_r, rho, _ = self._setup()
        feat = TabularFeaturizer(self.N, self.AH, self.AR)
        params = feat.build_encoders(latent_dim=4, dtype=torch.float64)
        batch = self._sample_batch(rng, pi_h, pi_r, rho, 64)
        x_phi, x_phi_prime, x_psi = feat.batch_inputs(batch)
        cbatch = ContrastiveBatch(x_phi, x_phi_prime, x_psi)

        loss = repr_loss(params, cbatch)
        loss.backward()
        eps = 1e-6
        for p in params.parameters():
            grad = p.grad.clone()
            flat = p.data.view(-1)
            for idx in range(0, flat.numel(), max(1, flat.numel() // 8)):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = repr_loss(params, cbatch).item()
                flat[idx] = orig - eps
                down = repr_loss(params, cbatch).item()
                flat[idx] = orig
                fd = (up - down) / (2 * eps)
                g = grad.view(-1)[idx].item()
                rel = abs(g - fd) / max(abs(g), abs(fd), 1e-8)
                assert rel <= 1e-4, f"grad {g:.6g} vs fd {fd:.6g}"


def _aggregate(path: Path) -> dict:
    if not path.exists():
        pytest.fail(
            f"missing cached benchmark output {path}; "
            "run scripts/run_benchmarks.py first (several CPU-hours)"
        )
    return json.loads(path.read_text())


class TestBenchmarkDirectionOfEffect:
    """Reads the cached 5x5 benchmark grid produced by scripts/run_benchmarks.py."""

    def test_esr_beats_random_and_ave_at_five_blocks(self):
        esr = _aggregate(RESULTS_DIR / "main_n5" / "aggregate_esr.json")
        rnd = _aggregate(RESULTS_DIR / "main_n5" / "aggregate_random.json")
        ave = _aggregate(RESULTS_DIR / "main_n5" / "aggregate_ave.json")
        for agg in (esr, rnd, ave):
            assert agg["num_seeds"] >= 20
        assert esr["mean_final_success"] >= rnd["mean_final_success"] + 0.1, (
            f"esr {esr['mean_final_success']:.3f} vs random {rnd['mean_final_success']:.3f}"
        )
        assert esr["mean_final_success"] >= ave["mean_final_success"], (
            f"esr {esr['mean_final_success']:.3f} vs ave {ave['mean_final_success']:.3f}"
        )

    def test_esr_reaches_easy_task_competence_at_two_blocks(self):
        esr = _aggregate(RESULTS_DIR / "easy_n2" / "aggregate_esr.json")
        assert esr["mean_final_success"] >= 0.8

    def test_lookahead_critic_at_least_matches_greedy(self):
        esr = _aggregate(RESULTS_DIR / "main_n5" / "aggregate_esr.json")
        greedy = _aggregate(RESULTS_DIR / "main_n5" / "aggregate_esr-greedy.json")
        assert esr["num_seeds"] >= 10 and greedy["num_seeds"] >= 10
        assert esr["mean_final_success"] >= greedy["mean_final_success"]

    def test_robot_action_conditioning_helps_at_seven_blocks(self):
        esr = _aggregate(RESULTS_DIR / "hard_n7" / "aggregate_esr.json")
        no_ar = _aggregate(RESULTS_DIR / "hard_n7" / "aggregate_esr-no-ar.json")
        assert esr["num_seeds"] >= 10 and no_ar["num_seeds"] >= 10
        assert esr["mean_final_success"] >= no_ar["mean_final_success"]


class TestDeterminism:
    def test_identical_config_yields_byte_identical_metrics(self, tmp_path):
        grid = GridConfig(width=3, height=3, num_blocks=1, goal_cell=8, horizon=6, seed=3)
        cfg = dict(
            grid=grid, epochs=3, episodes_per_epoch=2, repr_updates=4, critic_updates=4,
            repr_batch=32, rl_batch=32, latent_dim=8, width=32, eval_episodes=4, seed=42,
        )
        train_esr(TrainConfig(**cfg), out_dir=tmp_path / "a")
        train_esr(TrainConfig(**cfg), out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
            (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_scripted_assistant_metrics_are_byte_identical(self, tmp_path):
        grid = GridConfig(width=4, height=4, num_blocks=2, goal_cell=15, horizon=8, seed=0)
        paths = []
        for name in ("a", "b"):
            cfg = ExperimentConfig(
                grid=grid, assistant="random", seeds=[7], epochs=4,
                out_dir=str(tmp_path / name),
            )
            run_experiment(cfg)
            paths.append(tmp_path / name / "random_seed7" / "metrics.csv")
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestServiceReplay:
    def test_scripted_session_matches_offline_simulation(self):
        request = {
            "width": 5, "height": 5, "num_blocks": 3, "goal_cell": 24,
            "horizon": 40, "seed": 9, "assistant": "random",
        }
        script = [0, 2, 0, 3, 4, 0, 1, 0, 0, 2]

        client = TestClient(create_app())
        created = client.post("/sessions", json=request).json()
        sid = created["session_id"]
        server_states = []
        for a_h in script:
            resp = client.post(f"/sessions/{sid}/step", json={"human_action": a_h})
            assert resp.status_code == 200
            server_states.append(resp.json()["state"])

        config = GridConfig(width=5, height=5, num_blocks=3, goal_cell=24,
                            horizon=40, seed=9)
        state = initial_state(config, np.random.default_rng(9))
        rng = np.random.default_rng(9)
        for a_h, payload in zip(script, server_states):
            a_r = random_action(state, rng, config)
            state = grid_step(state, a_h, a_r, config)
            assert payload["human"] == state.human_cell
            assert tuple(payload["blocks"]) == state.block_cells
            assert payload["steps"] == state.steps_elapsed
            assert payload["done"] == state.done
            assert payload["last_robot_action"] == a_r
