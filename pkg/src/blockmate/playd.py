"""Interactive play server: a person builds in the browser while a trained
assistant acts live.

The engine loop owns a single session. Client messages arrive over a
WebSocket, are queued, and get applied at tick boundaries: each tick applies
at most one human action together with the assistant's action through one
world step. The session broadcasts full state snapshots after every tick and
periodic goal-belief snapshots for the overlay.

The assistant runtime only ever receives world states: the goal is read by
the session for rewards and by the human's client for the blueprint overlay,
but no structure handed to the runtime carries it.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import mcts as M
from . import world as W
from .evaluators import NetEvaluator, states_to_arrays
from .goals import GoalSet
from .net import net_forward
from .net.checkpoint import Checkpoint

logger = logging.getLogger(__name__)

BELIEF_EVERY_TICKS = 4
INBOX_LIMIT = 8

REASON_DECODE = "bad_message"
REASON_INVALID = "invalid_action"
REASON_THROTTLED = "too_many_queued"


class AssistantRuntime:
    """Checkpointed assistant acting from world states alone."""

    def __init__(self, checkpoint: Checkpoint, env_cfg: W.EnvConfig,
                 mode: str = "policy", sims: int = 20,
                 temperature: Optional[float] = None, seed: int = 0):
        self.model = checkpoint.build_model()
        self.model.eval()
        self.env_cfg = env_cfg
        self.mode = mode
        self.sims = sims
        meta_temp = checkpoint.metadata.get("temperature")
        self.temperature = temperature if temperature is not None else (
            meta_temp if meta_temp else 1.0)
        self.rng = np.random.default_rng(seed)
        self.evaluator = NetEvaluator(self.model, env_cfg, "assistant")

    def act(self, state: W.WorldState) -> int:
        if self.mode == "mcts":
            cfg = M.MctsConfig(num_simulations=self.sims,
                               dirichlet_epsilon=0.0, reward_mode=M.SPLIT)
            ctx = M.SearchContext(env_cfg=self.env_cfg,
                                  agent_slot=W.ASSISTANT, reward_mode=M.SPLIT)
            pol = M.run_search(state, ctx, cfg, self.evaluator,
                               M.NetworkOther(), self.rng)
            return pol.sample(self.rng)
        probs = self._policy(state)
        if self.temperature != 1.0:
            with np.errstate(divide="ignore"):
                probs = np.where(probs > 0, probs ** (1.0 / self.temperature), 0.0)
            probs = probs / probs.sum()
        return int(np.searchsorted(np.cumsum(probs), self.rng.random(),
                                   side="right"))

    def _policy(self, state: W.WorldState) -> np.ndarray:
        import torch
        cfg = self.model.config
        np_dtype = np.float64 if cfg.dtype == "float64" else np.float32
        obs = states_to_arrays([state], W.ASSISTANT, None,
                               cfg.include_prev_action, cfg.num_block_types,
                               np_dtype)
        mask = W.valid_action_mask(state, W.ASSISTANT, self.env_cfg.reach,
                                   cfg.num_block_types)
        mask_t = torch.from_numpy(mask[None])
        with torch.no_grad():
            out = net_forward(self.model, torch.from_numpy(obs).to(cfg.torch_dtype),
                              mask_t, mask_t)
            return out.policy_probs[0].double().numpy()

    def belief(self, state: W.WorldState) -> np.ndarray:
        import torch
        cfg = self.model.config
        np_dtype = np.float64 if cfg.dtype == "float64" else np.float32
        obs = states_to_arrays([state], W.ASSISTANT, None,
                               cfg.include_prev_action, cfg.num_block_types,
                               np_dtype)
        mask = torch.ones((1, cfg.num_actions), dtype=torch.bool)
        with torch.no_grad():
            out = net_forward(self.model, torch.from_numpy(obs).to(cfg.torch_dtype),
                              mask, mask)
            return out.goal_probs[0].double().numpy()


def decode_act_message(msg: dict, env_cfg: W.EnvConfig) -> Optional[W.Action]:
    """Translate an `act` message into an action; None when undecodable."""
    try:
        if "code" in msg:
            code = int(msg["code"])
            if code == 0:
                return W.NOOP_ACTION
            return W.action_from_index(code, env_cfg.dims,
                                       env_cfg.num_block_types)
        kind = msg["kind"]
        if kind == W.NOOP:
            return W.NOOP_ACTION
        if kind == W.MOVE:
            return W.Action(W.MOVE, direction=int(msg["dir"]))
        cell = tuple(int(v) for v in msg["cell"])
        if kind == W.BREAK:
            return W.Action(W.BREAK, cell=cell)
        if kind == W.PLACE:
            return W.Action(W.PLACE, cell=cell, block=int(msg["block"]))
    except (KeyError, TypeError, ValueError, IndexError):
        return None
    return None


@dataclass
class Session:
    env_cfg: W.EnvConfig
    goal_set: GoalSet
    runtime: AssistantRuntime
    tick_ms: int = 250
    seed: int = 0
    display_mode: str = "full"
    metrics_path: Optional[str] = None
    # --- live state ---
    state: Optional[W.WorldState] = None
    goal_id: int = -1
    tick_count: int = 0
    inbox: list[dict] = field(default_factory=list)
    message_log: list[dict] = field(default_factory=list)
    assistant_inputs: list[dict] = field(default_factory=list)
    human_place_break: int = 0
    assistant_reward: float = 0.0
    initial_distance: int = 0
    episodes_completed: int = 0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self.start_episode()

    # -- episodes -----------------------------------------------------------

    def start_episode(self) -> None:
        self.goal_id = int(self.rng.integers(len(self.goal_set)))
        goal = self.goal_set.goals[self.goal_id]
        self.state = W.new_episode(self.env_cfg, goal,
                                   int(self.rng.integers(2 ** 31)))
        self.initial_distance = W.edit_distance(self.state, goal)
        self.human_place_break = 0
        self.assistant_reward = 0.0
        self.tick_count = 0

    @property
    def goal(self):
        return self.goal_set.goals[self.goal_id]

    def metrics(self) -> dict:
        d_now = W.edit_distance(self.state, self.goal)
        d0 = max(self.initial_distance, 1)
        return {
            "goal_pct": 100.0 * (1 - d_now / d0),
            "human_actions": self.human_place_break,
            "assistant_goal_pct": 100.0 * self.assistant_reward / d0,
            "timestep": self.state.timestep,
        }

    # -- messages ------------------------------------------------------------

    def hello_msg(self) -> dict:
        return {
            "type": "hello",
            "dims": list(self.env_cfg.dims),
            "palette": list(range(self.env_cfg.num_block_types)),
            "goal": [int(v) for v in np.asarray(self.goal.cells).ravel()],
            "display_mode": self.display_mode,
            "tick_ms": self.tick_ms,
        }

    def state_msg(self) -> dict:
        players = []
        for p in self.state.players:
            code = 0
            if p.last_action is not None:
                code = W.action_index(p.last_action, self.env_cfg.dims,
                                      self.env_cfg.num_block_types)
            players.append({
                "position": None if p.position is None else list(p.position),
                "last_action": code,
            })
        return {
            "type": "state",
            "grid": [int(v) for v in self.state.grid.ravel()],
            "last_modifier": [int(v) for v in self.state.last_modifier.ravel()],
            "players": players,
            "timestep": self.state.timestep,
            "metrics": self.metrics(),
        }

    def belief_msg(self) -> dict:
        belief = self.runtime.belief(self.state)
        best = belief.argmax(axis=1)
        return {
            "type": "belief",
            "cells": [{"block": int(b), "p": float(belief[i, b])}
                      for i, b in enumerate(best)],
        }

    # -- input ----------------------------------------------------------------

    def queue_action(self, msg: dict) -> Optional[dict]:
        """Queue a client action for the next tick; returns an immediate
        `invalid` reply when the message cannot even be queued."""
        self.message_log.append({"dir": "in", "msg": msg})
        if len(self.inbox) >= INBOX_LIMIT:
            return {"type": "invalid", "reason": REASON_THROTTLED}
        self.inbox.append(msg)
        return None

    # -- the engine tick -------------------------------------------------------

    def tick(self) -> list[tuple[str, dict]]:
        """Advance one tick; returns (scope, message) pairs to deliver,
        scope 'player' or 'all'."""
        out: list[tuple[str, dict]] = []
        human_action = W.NOOP_ACTION
        if self.inbox:
            msg = self.inbox.pop(0)
            decoded = decode_act_message(msg, self.env_cfg)
            if decoded is None:
                out.append(("player", {"type": "error",
                                       "reason": REASON_DECODE}))
            elif not W.is_valid(self.state, W.BUILDER, decoded,
                                self.env_cfg.reach):
                out.append(("player", {"type": "invalid",
                                       "reason": REASON_INVALID}))
            else:
                human_action = decoded

        assistant_input = self.state
        self.assistant_inputs.append(_state_snapshot(assistant_input))
        assistant_idx = self.runtime.act(assistant_input)
        assistant_action = (W.NOOP_ACTION if assistant_idx == 0 else
                            W.action_from_index(assistant_idx, self.env_cfg.dims,
                                                self.env_cfg.num_block_types))
        res = W.apply(self.state, human_action, assistant_action, self.goal,
                      self.env_cfg)
        self.state = res.next_state
        self.assistant_reward += res.reward_assistant
        self.human_place_break += sum(1 for m in res.mutations
                                      if m.player == W.BUILDER)
        self.tick_count += 1
        out.append(("all", self.state_msg()))
        if self.tick_count % BELIEF_EVERY_TICKS == 0:
            out.append(("player", self.belief_msg()))
        if res.done:
            self.episodes_completed += 1
            out.append(("all", {"type": "bye", "metrics": self.metrics()}))
            self.flush_metrics()
            self.start_episode()
            out.append(("all", self.hello_msg()))
        for _, msg in out:
            self.message_log.append({"dir": "out", "msg": msg})
        return out

    def flush_metrics(self) -> None:
        if not self.metrics_path:
            return
        record = dict(self.metrics())
        record["episodes_completed"] = self.episodes_completed
        with open(self.metrics_path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def _state_snapshot(state: W.WorldState) -> dict:
    players = []
    for p in state.players:
        players.append({"position": None if p.position is None
                        else list(p.position)})
    return {
        "grid": [int(v) for v in state.grid.ravel()],
        "last_modifier": [int(v) for v in state.last_modifier.ravel()],
        "players": players,
        "timestep": state.timestep,
    }


def encode_message(msg: dict) -> str:
    """Wire encoding: compact single-line JSON."""
    return json.dumps(msg, separators=(",", ":"), sort_keys=True)


def build_app(session: Session) -> FastAPI:
    """FastAPI app running the session loop and fanning messages out."""
    import asyncio

    app = FastAPI()
    app.state.session = session
    clients: dict = {}
    player_box: list = []

    async def deliver(pairs):
        for scope, msg in pairs:
            text = encode_message(msg)
            targets = list(clients)
            for ws in targets:
                if scope == "player" and clients.get(ws) != "player":
                    continue
                try:
                    await ws.send_text(text)
                except Exception:
                    clients.pop(ws, None)

    async def tick_loop():
        while True:
            await asyncio.sleep(session.tick_ms / 1000.0)
            if not clients:
                continue
            pairs = session.tick()
            await deliver(pairs)

    @app.get("/debug/assistant-tap")
    async def assistant_tap():
        """Every input the assistant runtime has consumed, for hygiene checks."""
        return {"inputs": session.assistant_inputs,
                "count": len(session.assistant_inputs)}

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "timestep": session.state.timestep}

    @app.on_event("startup")
    async def _start():
        app.state.tick_task = asyncio.create_task(tick_loop())

    @app.on_event("shutdown")
    async def _stop():
        app.state.tick_task.cancel()
        session.flush_metrics()

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        role = "spectator" if "player" in clients.values() else "player"
        clients[websocket] = role
        await websocket.send_text(encode_message(session.hello_msg()))
        await websocket.send_text(encode_message(session.state_msg()))
        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await websocket.send_text(encode_message(
                        {"type": "error", "reason": REASON_DECODE}))
                    continue
                if role != "player":
                    await websocket.send_text(encode_message(
                        {"type": "error", "reason": "read_only"}))
                    continue
                reply = session.queue_action(msg)
                if reply is not None:
                    await websocket.send_text(encode_message(reply))
        except WebSocketDisconnect:
            pass
        finally:
            clients.pop(websocket, None)
            if role == "player":
                session.flush_metrics()

    return app


def serve(checkpoint: Checkpoint, env_cfg: W.EnvConfig, goal_set: GoalSet,
          port: int = 8712, tick_ms: int = 250, mode: str = "policy",
          sims: int = 20, host: str = "127.0.0.1", seed: int = 0,
          metrics_path: Optional[str] = None,
          static_dir: Optional[str] = None) -> None:
    import uvicorn

    runtime = AssistantRuntime(checkpoint, env_cfg, mode=mode, sims=sims,
                               seed=seed)
    session = Session(env_cfg=env_cfg, goal_set=goal_set, runtime=runtime,
                      tick_ms=tick_ms, seed=seed, metrics_path=metrics_path)
    app = build_app(session)
    if static_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")
    logger.info("serving on ws://%s:%d/ws (tick %dms, %s assistant)",
                host, port, tick_ms, mode)
    uvicorn.run(app, host=host, port=port, log_level="warning")
