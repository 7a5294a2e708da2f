"""Command-line entry points.

Subcommands: train, eval, oracle, ablate, verify-theory, serve, aggregate.
Experiment configs are JSON files; worker count comes from ESRLAB_WORKERS.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from .gridworld import GridConfig


def _grid_from_dict(obj: dict) -> GridConfig:
    return GridConfig(
        width=obj.get("width", 5),
        height=obj.get("height", 5),
        num_blocks=obj.get("num_blocks", 2),
        goal_cell=obj.get("goal_cell", 24),
        horizon=obj.get("horizon", 40),
        seed=obj.get("seed", 0),
    )


def _experiment_config(path: str, out: str | None, seed: int | None):
    from .harness import ExperimentConfig

    obj = json.loads(Path(path).read_text())
    seeds = obj.get("seeds", [0])
    if seed is not None:
        seeds = [seed]
    return ExperimentConfig(
        grid=_grid_from_dict(obj.get("grid", {})),
        assistant=obj.get("assistant", "esr"),
        seeds=seeds,
        out_dir=out or obj.get("out_dir", "runs"),
        human_beta=obj.get("human_beta", 5.0),
        human_gamma=obj.get("human_gamma", 0.9),
        epochs=obj.get("epochs", 300),
        train_overrides=obj.get("train_overrides", {}),
        eval_episodes_per_epoch=obj.get("eval_episodes_per_epoch", 8),
        cell_budget_seconds=obj.get("cell_budget_seconds", 7200.0),
    )


@click.group()
def main():
    """Empowerment-assistance laboratory."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def train(config_path, seed, out):
    """Train (or evaluate, for scripted assistants) every seed cell."""
    from .harness import run_experiment

    manifest = run_experiment(_experiment_config(config_path, out, seed))
    click.echo(json.dumps(manifest["aggregate"], indent=2))


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--episodes", type=int, default=100)
def eval_cmd(config_path, seed, out, episodes):
    """Evaluate a scripted assistant tag without training."""
    from .harness import ExperimentConfig, run_experiment

    cfg = _experiment_config(config_path, out, seed)
    cfg.epochs = max(1, episodes // cfg.eval_episodes_per_epoch)
    manifest = run_experiment(cfg)
    click.echo(json.dumps(manifest["aggregate"], indent=2))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default="empowerment_report.json")
@click.option("--gamma", type=float, default=0.9)
@click.option("--beta", type=float, default=5.0)
def oracle(config_path, out, gamma, beta):
    """Dump the exact empowerment report for a small layout."""
    from .gridworld import grid_to_tabular
    from .human import BoltzmannGridHuman
    from .mdp import DiscountSpec, Policy
    from .oracle import effective_empowerment

    obj = json.loads(Path(config_path).read_text())
    grid = _grid_from_dict(obj.get("grid", {}))
    tab = grid_to_tabular(grid)
    human = BoltzmannGridHuman(grid, beta=beta)
    pi_r = Policy.uniform(tab.num_states, grid.num_robot_actions)
    report = effective_empowerment(
        tab.mdp, human.tabular_policy(tab), pi_r, DiscountSpec(gamma_future=gamma)
    )
    Path(out).write_text(report.to_json())
    click.echo(f"total_empowerment={report.total_empowerment:.6f} nats -> {out}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
def ablate(config_path, out):
    """Expand a base config across assistants and block counts."""
    from .harness import ablation_suite

    table = ablation_suite(_experiment_config(config_path, out, None))
    click.echo(json.dumps(table, indent=2))


@main.command("verify-theory")
@click.option("--seed", type=int, default=0)
@click.option("--beta", type=float, default=2.0)
@click.option("--gamma", type=float, default=0.999)
@click.option("--num-mdps", type=int, default=20)
@click.option("--reward-samples", type=int, default=200)
@click.option("--out", type=click.Path(), default=None)
def verify_theory(seed, beta, gamma, num_mdps, reward_samples, out):
    """Softmax-entropy sweep plus the empowerment-vs-return bound check."""
    from .mdp import Policy, random_mdp
    from .oracle import verify_entropy_bound, verify_theorem_bound

    rng = np.random.default_rng(seed)
    entropy_cases = 0
    entropy_ok = True
    for k in range(2, 33):
        for b in np.linspace(0.0, 8.0, 17):
            for _ in range(5):
                res = verify_entropy_bound(k, b, rng.random(k))
                entropy_ok &= res["holds"]
                entropy_cases += 1
    results = []
    for i in range(num_mdps):
        mdp = random_mdp(5, 3, 2, rng, smoothing=0.05)
        res = verify_theorem_bound(
            mdp, Policy.uniform(5, 2), beta, gamma, reward_samples, rng
        )
        results.append(res)
        click.echo(f"mdp {i}: lhs={res['lhs']:.6f} rhs={res['rhs']:.6f} margin={res['margin']:.6f}")
    summary = {
        "entropy_sweep": {"cases": entropy_cases, "all_hold": bool(entropy_ok)},
        "theorem_margins": results,
        "all_margins_nonnegative": bool(all(r["margin"] >= 0 for r in results)),
    }
    if out:
        Path(out).write_text(json.dumps(summary, indent=2))
    click.echo(json.dumps({k: v for k, v in summary.items() if k != "theorem_margins"}, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8099)
@click.option("--checkpoint-root", type=click.Path(), default=".")
def serve(host, port, checkpoint_root):
    """Run the live-play session server."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(checkpoint_root), host=host, port=port)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(exists=True))
def aggregate(out_dir):
    """Recompute aggregates from the manifests under a results directory."""
    from .harness import aggregate_manifests

    click.echo(json.dumps(aggregate_manifests(out_dir), indent=2))


if __name__ == "__main__":
    main()
