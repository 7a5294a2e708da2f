"""Experiment configuration, seed fan-out, and result aggregation.

Each (assistant, seed) cell writes a metrics CSV; a manifest JSON lists every
artifact together with a hash of the configuration that produced it.  All
aggregates are mean +/- standard error across seeds.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agent import (
    METRICS_COLUMNS,
    TrainConfig,
    evaluate_policy,
    train_esr,
    write_metrics,
)
from .baselines import AveConfig, OracleEmpowermentAssistant, ave_action, random_action
from .errors import ConfigurationError
from .gridworld import GridConfig
from .human import BoltzmannGridHuman

WORKERS_ENV = "ESRLAB_WORKERS"

ASSISTANTS = (
    "esr",
    "esr-simplified",
    "esr-no-ar",
    "esr-greedy",
    "ave",
    "random",
    "none",
    "oracle-empowerment",
)
TRAINED_ASSISTANTS = ("esr", "esr-simplified", "esr-no-ar", "esr-greedy")

ABLATION_ASSISTANTS = ("esr", "esr-no-ar", "esr-greedy", "ave", "random")
ABLATION_BLOCK_COUNTS = (2, 5, 7, 10)
ABLATION_COLUMNS = ("num_blocks", "assistant", "mean_success", "se_success", "num_seeds")

FINAL_WINDOW = 5  # final success = mean success over this many trailing epochs


@dataclass
class ExperimentConfig:
    grid: GridConfig
    assistant: str
    seeds: list[int]
    out_dir: str
    human_beta: float = 5.0
    human_gamma: float = 0.9
    epochs: int = 300
    train_overrides: dict = field(default_factory=dict)
    eval_episodes_per_epoch: int = 8
    cell_budget_seconds: float = 7200.0

    def __post_init__(self):
        if self.assistant not in ASSISTANTS:
            raise ConfigurationError(f"unknown assistant tag {self.assistant!r}")
        if not self.seeds:
            raise ConfigurationError("seeds list must be nonempty")

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _train_config(config: ExperimentConfig, seed: int) -> TrainConfig:
    kw = dict(
        grid=config.grid,
        epochs=config.epochs,
        human_beta=config.human_beta,
        human_gamma=config.human_gamma,
        eval_episodes=config.eval_episodes_per_epoch,
        seed=seed,
        max_seconds=config.cell_budget_seconds,
    )
    if config.assistant == "esr-simplified":
        kw["reward_mode"] = "simplified"
    elif config.assistant == "esr-no-ar":
        kw["condition_robot_action"] = False
    elif config.assistant == "esr-greedy":
        kw["gamma_rl"] = 0.0
        # a purely reward-driven critic needs the taken-action reward signal
        kw["decorrelate_reward_action"] = False
    kw.update(config.train_overrides)
    return TrainConfig(**kw)


def _run_scripted_cell(config: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    """Evaluation-only assistants: log one metrics row per epoch."""
    grid = config.grid
    rng = np.random.default_rng(seed)
    human = BoltzmannGridHuman(grid, beta=config.human_beta, gamma=config.human_gamma)
    ave_cfg = AveConfig()
    oracle_assistant = None
    if config.assistant == "oracle-empowerment":
        oracle_assistant = OracleEmpowermentAssistant(grid, human_beta=config.human_beta)

    def policy(state):
        if config.assistant == "none":
            return 0
        if config.assistant == "random":
            return random_action(state, rng, grid)
        if config.assistant == "ave":
            return ave_action(state, ave_cfg, rng, grid)
        return oracle_assistant.act(state)

    rows = []
    env_steps = 0
    deadline = time.monotonic() + config.cell_budget_seconds
    truncated = False
    for epoch in range(config.epochs):
        if time.monotonic() > deadline:
            truncated = True
            break
        rate, mean_steps = evaluate_policy(
            grid, human, policy, config.eval_episodes_per_epoch, rng
        )
        env_steps += config.eval_episodes_per_epoch * grid.horizon
        rows.append(
            {
                "epoch": epoch,
                "env_steps": env_steps,
                "repr_loss": "",
                "mi_estimate": "",
                "oracle_empowerment": "",
                "success_rate": f"{rate:.10g}",
                "mean_steps_to_goal": "" if np.isnan(mean_steps) else f"{mean_steps:.10g}",
                "q_loss": "",
            }
        )
    write_metrics(out_dir / "metrics.csv", rows)
    return {"rows": rows, "truncated": truncated}


def _run_cell(config: ExperimentConfig, seed: int) -> dict:
    cell_dir = Path(config.out_dir) / f"{config.assistant}_seed{seed}"
    cell_dir.mkdir(parents=True, exist_ok=True)
    start = time.monotonic()
    try:
        if config.assistant in TRAINED_ASSISTANTS:
            artifacts = train_esr(_train_config(config, seed), out_dir=cell_dir)
            rows, truncated = artifacts.metrics_rows, artifacts.truncated
        else:
            result = _run_scripted_cell(config, seed, cell_dir)
            rows, truncated = result["rows"], result["truncated"]
        final = final_success(rows)
        return {
            "assistant": config.assistant,
            "seed": seed,
            "status": "ok",
            "truncated": truncated,
            "final_success": final,
            "metrics": str(cell_dir / "metrics.csv"),
            "duration_sec": time.monotonic() - start,
        }
    except Exception as exc:  # partial failures are recorded, not raised
        (cell_dir / "error.txt").write_text(traceback.format_exc())
        return {
            "assistant": config.assistant,
            "seed": seed,
            "status": "failed",
            "error": f"{type(exc).__name__}: {exc}",
            "metrics": None,
            "duration_sec": time.monotonic() - start,
        }


def final_success(rows: list[dict], window: int = FINAL_WINDOW) -> float:
    vals = [float(r["success_rate"]) for r in rows if r.get("success_rate", "") != ""]
    if not vals:
        return float("nan")
    return float(np.mean(vals[-window:]))


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every seed cell for the configured assistant; write per-cell metrics
    CSVs, an aggregate, and a manifest JSON.  Returns the manifest."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell, [config] * len(config.seeds), config.seeds))
    else:
        cells = [_run_cell(config, seed) for seed in config.seeds]

    finals = [c["final_success"] for c in cells if c["status"] == "ok"]
    aggregate = {
        "assistant": config.assistant,
        "num_seeds": len(finals),
        "mean_final_success": float(np.mean(finals)) if finals else None,
        "se_final_success": (
            float(np.std(finals, ddof=1) / np.sqrt(len(finals))) if len(finals) > 1 else None
        ),
    }
    (out_dir / f"aggregate_{config.assistant}.json").write_text(json.dumps(aggregate, indent=2))
    manifest = {
        "config": asdict(config),
        "config_hash": config.config_hash(),
        "cells": cells,
        "aggregate": aggregate,
        "artifacts": [c["metrics"] for c in cells if c["metrics"]],
    }
    (out_dir / f"manifest_{config.assistant}.json").write_text(json.dumps(manifest, indent=2, default=str))
    if any(c["status"] != "ok" for c in cells):
        manifest["failed"] = True
    return manifest


def ablation_suite(
    base: ExperimentConfig,
    block_counts=ABLATION_BLOCK_COUNTS,
    assistants=ABLATION_ASSISTANTS,
) -> list[dict]:
    """Expand a base config across assistants and block counts; one table row
    per (N, assistant) with mean +/- SE of final success."""
    table = []
    for n in block_counts:
        grid = GridConfig(
            width=base.grid.width,
            height=base.grid.height,
            num_blocks=n,
            goal_cell=base.grid.goal_cell,
            horizon=base.grid.horizon,
            seed=base.grid.seed,
        )
        for assistant in assistants:
            cfg = ExperimentConfig(
                grid=grid,
                assistant=assistant,
                seeds=base.seeds,
                out_dir=str(Path(base.out_dir) / f"n{n}"),
                human_beta=base.human_beta,
                human_gamma=base.human_gamma,
                epochs=base.epochs,
                train_overrides=dict(base.train_overrides),
                eval_episodes_per_epoch=base.eval_episodes_per_epoch,
                cell_budget_seconds=base.cell_budget_seconds,
            )
            manifest = run_experiment(cfg)
            agg = manifest["aggregate"]
            table.append(
                {
                    "num_blocks": n,
                    "assistant": assistant,
                    "mean_success": agg["mean_final_success"],
                    "se_success": agg["se_final_success"],
                    "num_seeds": agg["num_seeds"],
                }
            )
    out = Path(base.out_dir) / "ablation_table.csv"
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(table)
    return table


def aggregate_manifests(out_dir: str | Path) -> list[dict]:
    """Recompute aggregates from manifests alone (figure-feeding numbers)."""
    rows = []
    for path in sorted(Path(out_dir).rglob("manifest_*.json")):
        manifest = json.loads(path.read_text())
        agg = manifest["aggregate"]
        rows.append(
            {
                "manifest": str(path),
                "assistant": agg["assistant"],
                "num_seeds": agg["num_seeds"],
                "mean_final_success": agg["mean_final_success"],
                "se_final_success": agg["se_final_success"],
            }
        )
    return rows
