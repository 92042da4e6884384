"""Real-time interaction service: a WebSocket episode server for live humans.

One authoritative environment loop per session advances the game at a fixed
tick: read the participant's latest acceleration input (default: maintain),
snap it to the discrete menu, plan the robot action within the tick budget,
step the dynamics, update the belief, broadcast a snapshot. Traces persist in
the exact sim-harness format so live sessions replay and aggregate with batch
episodes.
"""
from __future__ import annotations

import asyncio
import json
import logging
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import WIRE_SCHEMA_VERSION, __version__
from .belief import ZeroLikelihoodError, belief_reward, info_gain, update_belief
from .config import GameConfig, config_hash
from .episode import EpisodeRecorder, StepRecord, write_trace
from .game import JointState
from .planner import Planner, PlannerParams
from .runtime import RuntimeBundle

logger = logging.getLogger("mergeplan.service")

CONTROL_ACTIONS = ("start", "reset", "select_planner")
PLANNER_CHOICES = ("ours", "blp1")


class ProtocolError(ValueError):
    pass


def encode_message(msg: dict) -> str:
    """Serialize one wire message; every documented type carries `version`."""
    if "type" not in msg:
        raise ProtocolError("message missing `type`")
    return json.dumps(msg, separators=(",", ":"), sort_keys=True)


def decode_message(text: str) -> dict:
    """Parse and validate one inbound frame.

    Malformed JSON or a known type with bad fields raises ProtocolError;
    unknown types pass through for the session to ignore with a warning.
    """
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed frame: {exc}") from exc
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError("frame is not an object with a `type` field")
    kind = msg["type"]
    if kind == "input":
        if not isinstance(msg.get("accel"), (int, float)):
            raise ProtocolError("input message needs a numeric `accel`")
    elif kind == "control":
        if msg.get("action") not in CONTROL_ACTIONS:
            raise ProtocolError(f"control action must be one of {CONTROL_ACTIONS}")
        if "planner" in msg and msg["planner"] not in PLANNER_CHOICES:
            raise ProtocolError(f"planner must be one of {PLANNER_CHOICES}")
    elif kind in ("snapshot", "config", "error"):
        if "version" not in msg:
            raise ProtocolError(f"{kind} message needs a `version`")
    return msg


class Session:
    """Mutable state of one live episode; owned by the environment loop."""

    def __init__(self, bundle: RuntimeBundle, trace_dir: Path, session_id: int):
        self.bundle = bundle
        self.trace_dir = trace_dir
        self.session_id = session_id
        self.phase = "lobby"
        self.planner_mode = "ours"
        self.latest_accel = 0.0
        self.t = 0
        self.outcome: str | None = None
        self.state: JointState | None = None
        self.belief = None
        self.planner: Planner | None = None
        self.recorder: EpisodeRecorder | None = None
        self.tick_durations: list[float] = []
        self.last_robot_action = None
        self.last_human_accel = 0.0
        self.last_reward = 0.0
        self.last_gain = 0.0
        self.last_diag: dict | None = None

    def start_episode(self, seed: int = 0):
        cfg = self.bundle.cfg
        grid = self.bundle.game.grid
        sc = cfg.scenario
        self.state = grid.snap(sc.x_r, grid.y[0], sc.x_h, sc.v_r, sc.v_h)
        self.belief = self.bundle.prior_belief(self.state)
        eta0 = 0.0 if self.planner_mode == "blp1" else cfg.planner.eta0
        # same seed derivation as the batch harness so scripted sessions
        # reproduce simulated episodes exactly
        _, plan_ss = np.random.SeedSequence(seed).spawn(2)
        params = PlannerParams.from_config(
            cfg.planner, cfg.solver.gamma,
            seed=int(plan_ss.generate_state(1)[0]),
            budget_ms=cfg.episode.service_budget_ms, eta0=eta0,
        )
        self.planner = Planner(self.bundle.model, params)
        spec_doc = {
            "label": self.planner_mode if self.planner_mode == "blp1" else "ours",
            "robot_mode": "planner" if self.planner_mode == "ours" else "blp1",
            "session": self.session_id,
            "live_human": True,
            "cap": cfg.episode.cap,
            "seed": seed,
            "true_theta": None,
        }
        self.recorder = EpisodeRecorder(self.bundle, spec_doc, self.state,
                                        self.bundle.space.prior)
        self.t = 0
        self.outcome = None
        self.tick_durations = []
        self.phase = "running"

    def snap_accel(self, accel: float) -> int:
        menu = [a.accel for a in self.bundle.game.actions_h]
        return min(range(len(menu)), key=lambda i: (abs(menu[i] - accel), i))

    def tick(self) -> dict:
        """One environment step; returns the snapshot document."""
        t0 = time.perf_counter()
        bundle = self.bundle
        game = bundle.game
        grid = game.grid
        model = bundle.model

        a_h = self.snap_accel(self.latest_accel)
        a_r, diag = self.planner.plan(self.belief)
        s_idx = grid.to_index(self.state)
        reward = belief_reward(model, self.belief, a_r)
        gain = info_gain(model, self.belief, a_r)
        s2_idx = int(model.successors(s_idx, a_r)[a_h])
        s2 = grid.from_index(s2_idx)
        reset = False
        try:
            self.belief = update_belief(model, self.belief, a_r, s2_idx)
        except ZeroLikelihoodError:
            self.belief = model.prior_belief(s2_idx)
            reset = True

        self.recorder.add(StepRecord(
            t=self.t, state=self.state,
            a_r=game.actions_r[a_r], a_h=game.actions_h[a_h],
            belief=self.belief.to_json(grid, bundle.space),
            reward=reward, gain=gain, diag=diag.to_json(), belief_reset=reset,
        ))
        hard = self.recorder.observe_state(s2)
        self.state = s2
        self.t += 1
        if hard is not None:
            self.outcome = hard
        elif self.recorder.road_ended(s2) or self.t >= bundle.cfg.episode.cap:
            self.outcome = self.recorder.classify_stall()

        self.last_robot_action = game.actions_r[a_r]
        self.last_human_accel = game.actions_h[a_h].accel
        self.last_reward = reward
        self.last_gain = gain
        self.last_diag = diag.to_json()
        if self.outcome is not None:
            self.phase = "finished"
            self.persist_trace(partial=False)
        self.tick_durations.append((time.perf_counter() - t0) * 1000.0)
        return self.snapshot_doc()

    def snapshot_doc(self) -> dict:
        s = self.state
        doc = {
            "type": "snapshot",
            "version": WIRE_SCHEMA_VERSION,
            "t": self.t,
            "phase": self.phase,
            "state": {"x_r": s.x_r, "y_r": s.y_r, "x_h": s.x_h,
                      "v_r": s.v_r, "v_h": s.v_h},
            "belief": self.belief.to_json(self.bundle.game.grid, self.bundle.space),
            "last_robot_action": (
                None if self.last_robot_action is None else
                {"accel": self.last_robot_action.accel, "lat": self.last_robot_action.lat}
            ),
            "last_human_accel": self.last_human_accel,
            "reward": self.last_reward,
            "info_gain": self.last_gain,
            "diagnostics": self.last_diag,
            "outcome": self.outcome,
        }
        return doc

    def config_doc(self) -> dict:
        cfg = self.bundle.cfg
        grid = self.bundle.game.grid
        return {
            "type": "config",
            "version": WIRE_SCHEMA_VERSION,
            "tick_ms": cfg.episode.tick_ms,
            "config_hash": config_hash(cfg),
            "grid": {
                "x": list(grid.x), "y": list(grid.y),
                "v_r": list(grid.v_r), "v_h": list(grid.v_h),
            },
            "lanes": {
                "width": cfg.grid.lane_width,
                "lower_center": float(grid.y[0]),
                "upper_center": float(grid.y[-1]),
            },
            "car": {"length": cfg.car.length, "width": cfg.car.width},
            "action_set": {
                "human_accels": [a.accel for a in self.bundle.game.actions_h],
                "robot": [
                    {"accel": a.accel, "lat": a.lat}
                    for a in self.bundle.game.actions_r
                ],
            },
            "latent_types": [
                {"k": t.k, "lambda": t.lam} for t in self.bundle.space.types
            ],
        }

    def persist_trace(self, partial: bool):
        if self.recorder is None:
            return
        trace = self.recorder.finish(self.outcome or "timeout",
                                     self.bundle.game.dt, partial=partial)
        path = self.trace_dir / f"session-{self.session_id}-{int(time.time()*1000)}.jsonl"
        write_trace(trace, path)
        self.last_trace_path = str(path)
        self.recorder = None


def create_app(cfg: GameConfig, cache_dir=None, trace_dir="traces",
               multi_session: bool = False, bundle: RuntimeBundle | None = None) -> FastAPI:
    app = FastAPI(title="mergeplan interaction service", version=__version__)
    state = {"bundle": bundle, "active": 0, "next_id": 1}
    trace_path = Path(trace_dir)

    def get_bundle() -> RuntimeBundle:
        if state["bundle"] is None:
            state["bundle"] = RuntimeBundle.build(cfg, cache_dir=cache_dir)
        return state["bundle"]

    @app.get("/health")
    def health():
        return {
            "version": __version__,
            "wire_version": WIRE_SCHEMA_VERSION,
            "config_hash": config_hash(cfg),
            "active_sessions": state["active"],
        }

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket):
        await ws.accept()
        if state["active"] >= 1 and not multi_session:
            await ws.send_text(encode_message({
                "type": "error", "version": WIRE_SCHEMA_VERSION,
                "message": "another session is active",
            }))
            await ws.close()
            return
        state["active"] += 1
        session = Session(get_bundle(), trace_path, state["next_id"])
        state["next_id"] += 1
        send_lock = asyncio.Lock()

        async def send(doc: dict):
            async with send_lock:
                await ws.send_text(encode_message(doc))

        async def error(message: str):
            await send({"type": "error", "version": WIRE_SCHEMA_VERSION,
                        "message": message})

        tick_task: asyncio.Task | None = None

        async def tick_loop():
            period = session.bundle.cfg.episode.tick_ms / 1000.0
            try:
                # the first tick's input deadline is one full period after start
                await asyncio.sleep(period)
                while session.phase == "running":
                    started = time.perf_counter()
                    snapshot = await asyncio.to_thread(session.tick)
                    try:
                        await asyncio.wait_for(send(snapshot),
                                               timeout=max(1.0, 4 * period))
                    except Exception:
                        break  # client went away; abort the episode
                    if session.phase != "running":
                        break
                    elapsed = time.perf_counter() - started
                    await asyncio.sleep(max(0.0, period - elapsed))
            finally:
                # the loop owns the recorder: an episode that never reached a
                # terminal outcome persists as a flagged partial trace
                if session.recorder is not None:
                    session.phase = "finished"
                    session.outcome = session.outcome or "timeout"
                    session.persist_trace(partial=True)

        try:
            await send(session.config_doc())
            while True:
                raw = await ws.receive_text()
                try:
                    msg = decode_message(raw)
                except ProtocolError as exc:
                    await error(str(exc))
                    continue
                kind = msg["type"]
                if kind == "input":
                    session.latest_accel = float(msg["accel"])
                elif kind == "control":
                    action = msg["action"]
                    if action == "select_planner":
                        if session.phase == "running":
                            await error("cannot switch planners mid-episode")
                        else:
                            session.planner_mode = msg.get("planner", "ours")
                    elif action in ("start", "reset"):
                        if msg.get("version") != WIRE_SCHEMA_VERSION:
                            await error(
                                f"wire schema mismatch: server speaks "
                                f"{WIRE_SCHEMA_VERSION}, client sent {msg.get('version')}"
                            )
                            await ws.close()
                            return
                        if tick_task is not None:
                            session.phase = "finished"
                            await asyncio.wait({tick_task})
                            if session.recorder is not None:
                                session.persist_trace(partial=True)
                        session.latest_accel = 0.0
                        session.start_episode(seed=int(msg.get("seed", 0)))
                        await send(session.snapshot_doc())
                        tick_task = asyncio.create_task(tick_loop())
                else:
                    logger.warning("ignoring unknown message type %r", kind)
        except WebSocketDisconnect:
            pass
        finally:
            if tick_task is not None and not tick_task.done():
                session.phase = "finished"
                await asyncio.wait({tick_task})
            if session.recorder is not None:
                session.outcome = session.outcome or "timeout"
                session.persist_trace(partial=True)
            state["active"] -= 1

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
