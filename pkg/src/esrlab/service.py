"""Live-play session server.

A human client submits actions in real time; the configured assistant picks
its evaluation-mode (argmax) action each tick.  Server-side state is
authoritative: replaying a session's step log through grid_step reproduces
its final state exactly.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import contrastive
from .agent import AssistantCritic, assistant_action, load_critic_checkpoint
from .baselines import AveConfig, OracleEmpowermentAssistant, ave_action, random_action
from .contrastive import GridFeaturizer
from .errors import ConfigurationError
from .gridworld import HUMAN_ACTIONS, GridConfig, GridState, grid_step, initial_state

DEFAULT_IDLE_TIMEOUT = 1800.0


class ServiceError(Exception):
    def __init__(self, status: int, code: str):
        super().__init__(code)
        self.status = status
        self.code = code


@dataclass
class LoadedAssistant:
    tag: str
    critic: AssistantCritic | None = None
    featurizer: GridFeaturizer | None = None
    repr_params: object | None = None
    ave_config: AveConfig = field(default_factory=AveConfig)
    oracle: OracleEmpowermentAssistant | None = None


def _load_esr_assistant(tag: str, checkpoint_dir: str, grid: GridConfig) -> LoadedAssistant:
    root = Path(checkpoint_dir)
    repr_path, critic_path = root / "repr.pt", root / "critic.pt"
    if not repr_path.exists() or not critic_path.exists():
        raise ServiceError(404, "checkpoint_not_found")
    payload = torch.load(repr_path, weights_only=False)
    extra = payload.get("extra", {})
    train_cfg = extra.get("train_config", {})
    dtype = torch.float64 if train_cfg.get("dtype") == "float64" else torch.float32
    featurizer = GridFeaturizer(
        grid, payload.get("condition_robot_action", True), dtype
    )
    params = featurizer.build_encoders(
        payload["latent_dim"], train_cfg.get("width", 256), dtype
    )
    contrastive.load_repr_checkpoint(repr_path, params)
    critic_payload = torch.load(critic_path, weights_only=False)
    critic = AssistantCritic.build(
        featurizer.psi_dim,
        critic_payload["num_actions"],
        train_cfg.get("critic_width") or train_cfg.get("width", 256),
        dtype,
        alpha=critic_payload["alpha"],
        gamma_rl=critic_payload["gamma_rl"],
    )
    load_critic_checkpoint(critic_path, critic)
    loaded = LoadedAssistant(tag=tag, critic=critic, featurizer=featurizer)
    loaded.repr_params = params
    return loaded


@dataclass
class Session:
    session_id: str
    config: GridConfig
    state: GridState
    assistant: LoadedAssistant
    rng: np.random.Generator
    step_log: list = field(default_factory=list)
    last_robot_action: int | None = None
    diagnostics: dict = field(default_factory=dict)
    created: float = field(default_factory=time.monotonic)
    last_active: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock)


def assistant_step(assistant: LoadedAssistant, state: GridState,
                   grid: GridConfig, rng: np.random.Generator) -> tuple[int, dict]:
    """Evaluation-mode action plus per-action diagnostics for the UI."""
    tag = assistant.tag
    if tag == "none":
        return 0, {}
    if tag == "random":
        return random_action(state, rng, grid), {}
    if tag == "ave":
        return ave_action(state, assistant.ave_config, rng, grid), {}
    if tag == "oracle-empowerment":
        return assistant.oracle.act(state), {}
    # esr / esr-simplified: argmax critic action with per-action reward estimates
    row = np.array([[state.human_cell, *state.block_cells]], dtype=np.int64)
    feat = assistant.featurizer.state_inputs(row)
    action = assistant_action(assistant.critic, feat[0], rng, evaluate=True)
    diagnostics = {"esr_reward_per_action": _per_action_rewards(assistant, state, grid)}
    return action, diagnostics


def _per_action_rewards(assistant: LoadedAssistant, state: GridState, grid: GridConfig) -> list:
    """Simplified ESR reward per candidate robot action, averaged over the
    human's actions (what the agent believes empowers the human)."""
    from .buffer import FutureBatch

    n_ar = grid.num_robot_actions
    row = np.array([state.human_cell, *state.block_cells], dtype=np.int64)
    rewards = []
    for a_r in range(n_ar):
        fut = FutureBatch(
            s=np.tile(row, (HUMAN_ACTIONS, 1)),
            a_h=np.arange(HUMAN_ACTIONS),
            a_r=np.full(HUMAN_ACTIONS, a_r),
            g=np.tile(row, (HUMAN_ACTIONS, 1)),
            offsets=np.ones(HUMAN_ACTIONS, dtype=int),
        )
        x_phi, x_phi_prime, _ = assistant.featurizer.batch_inputs(fut)
        r = contrastive.esr_reward_simplified(assistant.repr_params, x_phi, x_phi_prime)
        rewards.append(float(r.mean().item()))
    return rewards


class SessionManager:
    """Authoritative game state with per-session serialization."""

    def __init__(self, checkpoint_root: str | None = None,
                 idle_timeout: float = DEFAULT_IDLE_TIMEOUT):
        self.checkpoint_root = checkpoint_root
        self.idle_timeout = idle_timeout
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()

    def _reap(self) -> None:
        now = time.monotonic()
        stale = [k for k, s in self._sessions.items() if now - s.last_active > self.idle_timeout]
        for k in stale:
            del self._sessions[k]

    def create_session(self, request: dict) -> Session:
        seed = int(request.get("seed", 0))
        num_blocks = int(request.get("num_blocks", 2))
        tag = request.get("assistant", "none")
        try:
            config = GridConfig(
                width=int(request.get("width", 5)),
                height=int(request.get("height", 5)),
                num_blocks=num_blocks,
                goal_cell=int(request.get("goal_cell", 24)),
                horizon=int(request.get("horizon", 40)),
                seed=seed,
            )
        except ConfigurationError as exc:
            raise ServiceError(400, f"invalid_config: {exc}") from exc
        if tag in ("esr", "esr-simplified"):
            ref = request.get("checkpoint")
            if not ref:
                raise ServiceError(404, "checkpoint_not_found")
            path = Path(self.checkpoint_root or ".") / ref
            assistant = _load_esr_assistant(tag, str(path), config)
        elif tag in ("none", "random", "ave"):
            assistant = LoadedAssistant(tag=tag)
        elif tag == "oracle-empowerment":
            assistant = LoadedAssistant(tag=tag)
            try:
                assistant.oracle = OracleEmpowermentAssistant(config)
            except ConfigurationError as exc:
                raise ServiceError(400, f"invalid_config: {exc}") from exc
        else:
            raise ServiceError(400, "invalid_config: unknown assistant")
        if "layout" in request:
            from .gridworld import layout_from_json
            import json as _json

            try:
                config, state = layout_from_json(
                    _json.dumps(request["layout"]), horizon=config.horizon
                )
            except (ConfigurationError, KeyError) as exc:
                raise ServiceError(400, f"invalid_config: {exc}") from exc
        else:
            state = initial_state(config, np.random.default_rng(seed))
        session = Session(
            session_id=secrets.token_hex(16),
            config=config,
            state=state,
            assistant=assistant,
            rng=np.random.default_rng(seed),
        )
        with self._registry_lock:
            self._reap()
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._registry_lock:
            self._reap()
            session = self._sessions.get(session_id)
        if session is None:
            raise ServiceError(404, "session_not_found")
        return session

    def delete(self, session_id: str) -> None:
        with self._registry_lock:
            if session_id not in self._sessions:
                raise ServiceError(404, "session_not_found")
            del self._sessions[session_id]

    def step(self, session_id: str, human_action) -> Session:
        session = self.get(session_id)
        with session.lock:
            if session.state.done:
                raise ServiceError(409, "session_done")
            if not isinstance(human_action, int) or not 0 <= human_action < HUMAN_ACTIONS:
                raise ServiceError(400, "invalid_action")
            a_r, diagnostics = assistant_step(
                session.assistant, session.state, session.config, session.rng
            )
            session.state = grid_step(session.state, human_action, a_r, session.config)
            session.last_robot_action = a_r
            session.diagnostics = diagnostics
            session.step_log.append({"human_action": human_action, "robot_action": a_r})
            session.last_active = time.monotonic()
        return session


def state_payload(session: Session) -> dict:
    state, config = session.state, session.config
    return {
        "width": config.width,
        "height": config.height,
        "human": state.human_cell,
        "goal": config.goal_cell,
        "blocks": list(state.block_cells),
        "steps": state.steps_elapsed,
        "done": state.done,
        "last_robot_action": session.last_robot_action,
        "diagnostics": session.diagnostics,
    }


def create_app(checkpoint_root: str | None = None, idle_timeout: float = DEFAULT_IDLE_TIMEOUT):
    app = FastAPI(title="esrlab play service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    manager = SessionManager(checkpoint_root, idle_timeout)
    app.state.manager = manager

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"error": exc.code})

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.json()
        session = manager.create_session(body)
        return {"session_id": session.session_id, "state": state_payload(session)}

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        return {"session_id": session_id, "state": state_payload(manager.get(session_id))}

    @app.post("/sessions/{session_id}/step")
    async def step_session(session_id: str, request: Request):
        body = await request.json()
        session = manager.step(session_id, body.get("human_action"))
        return {
            "session_id": session_id,
            "state": state_payload(session),
            "robot_action": session.last_robot_action,
            "done": session.state.done,
        }

    @app.delete("/sessions/{session_id}")
    async def delete_session(session_id: str):
        manager.delete(session_id)
        return {"deleted": session_id}

    return app
