"""Closed-loop episodes: planner (or a fixed ql-k policy) vs. a simulated
quantal level-k human, with belief tracking and JSON-lines traces.

An episode ends on merge completion, collision, either car reaching the end
of the road segment, or the step cap. Non-merge endings are classified as
deadlock when the longitudinal gap has been frozen (changed less than one
grid cell) over the trailing window, otherwise as timeout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import TRACE_SCHEMA
from .belief import ZeroLikelihoodError, belief_reward, info_gain, update_belief
from .config import ScenarioConfig, config_hash
from .game import HUMAN, ROBOT, JointState, OwnAction
from .planner import Planner, PlannerParams
from .qlk import LatentState
from .runtime import RuntimeBundle

OUTCOMES = ("merged", "collision", "deadlock", "timeout")

ROBOT_MODES = ("planner", "blp1", "qlk")


@dataclass(frozen=True)
class EpisodeSpec:
    """Everything that pins down one episode, including all randomness."""

    true_theta: LatentState
    planner: PlannerParams
    initial: JointState | None = None      # None -> scenario defaults
    random_offset: float | None = None     # human start within +/- this of x_r
    robot_mode: str = "planner"            # "planner" | "blp1" | "qlk"
    robot_k: int = 2                       # level for robot_mode == "qlk"
    cap: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.robot_mode not in ROBOT_MODES:
            raise ValueError(f"robot_mode must be one of {ROBOT_MODES}")
        if self.cap < 1:
            raise ValueError("episode cap must be >= 1")

    def label(self) -> str:
        if self.robot_mode == "qlk":
            return f"qlk{self.robot_k}"
        return "ours" if self.robot_mode == "planner" else "blp1"


@dataclass
class StepRecord:
    t: int
    state: JointState
    a_r: OwnAction
    a_h: OwnAction
    belief: dict                 # posterior snapshot after this step's observation
    reward: float                # belief-space step reward r' for the taken action
    gain: float                  # expected information gain of the taken action
    diag: dict | None = None     # planner diagnostics (None for ql-k robots)
    belief_reset: bool = False   # zero-likelihood recovery fired


@dataclass
class EpisodeTrace:
    spec: dict
    config_hash: str
    initial: JointState
    prior: list
    records: list[StepRecord] = field(default_factory=list)
    outcome: str = "timeout"
    tm: float | None = None
    min_gap: float = float("inf")
    partial: bool = False

    @property
    def steps(self) -> int:
        return len(self.records)


class EpisodeRecorder:
    """Shared bookkeeping for batch episodes and live service sessions."""

    def __init__(self, bundle: RuntimeBundle, spec_doc: dict, initial: JointState,
                 prior: np.ndarray, deadlock_window: int | None = None):
        self.bundle = bundle
        self.game = bundle.game
        self.trace = EpisodeTrace(
            spec=spec_doc,
            config_hash=config_hash(bundle.cfg),
            initial=initial,
            prior=[float(p) for p in prior],
        )
        self._gaps: list[float] = []
        self._window = deadlock_window or bundle.cfg.episode.deadlock_window
        self.observe_state(initial)

    def observe_state(self, s: JointState) -> str | None:
        """Track gap statistics; return a hard outcome if the state forces one."""
        gap = abs(s.x_r - s.x_h)
        self._gaps.append(gap)
        if gap < self.trace.min_gap:
            self.trace.min_gap = gap
        if not self.game.is_safe(s):
            return "collision"
        if self.game.merged(s):
            return "merged"
        return None

    def road_ended(self, s: JointState) -> bool:
        g = self.game.grid
        return s.x_r == g.x[-1] or s.x_h == g.x[-1]

    def add(self, record: StepRecord):
        self.trace.records.append(record)

    def stalled(self) -> bool:
        """Mutual-yield stalemate: the longitudinal gap has not net-shifted by
        a full grid cell across the trailing window."""
        if len(self._gaps) < self._window + 1:
            return False
        spacing = self.game.grid.x_spacing
        return abs(self._gaps[-1] - self._gaps[-(self._window + 1)]) < spacing

    def classify_stall(self) -> str:
        """End-of-road / cap classification for episodes that never merged."""
        if self.stalled():
            return "deadlock"
        window = self._gaps[-min(self._window, len(self._gaps)):]
        spacing = self.game.grid.x_spacing
        if len(window) >= 2 and (max(window) - min(window)) < spacing:
            return "deadlock"
        return "timeout"

    def finish(self, outcome: str, dt: float, partial: bool = False) -> EpisodeTrace:
        self.trace.outcome = outcome
        self.trace.partial = partial
        if outcome == "merged":
            self.trace.tm = len(self.trace.records) * dt
        return self.trace


def initial_state(bundle: RuntimeBundle, spec: EpisodeSpec, rng: np.random.Generator) -> JointState:
    grid = bundle.game.grid
    sc: ScenarioConfig = bundle.cfg.scenario
    if spec.initial is not None:
        base = spec.initial
    else:
        base = JointState(sc.x_r, grid.y[0], sc.x_h, sc.v_r, sc.v_h)
    offset = spec.random_offset
    if offset is None and spec.initial is None:
        offset = sc.random_offset
    if offset:
        x_h = base.x_r + rng.uniform(-offset, offset)
        base = JointState(base.x_r, base.y_r, x_h, base.v_r, base.v_h)
    return grid.snap(*base.as_tuple())


def _sample_row(row: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(row)
    j = int(np.searchsorted(c, rng.random() * c[-1]))
    return min(j, len(row) - 1)


def run_episode(bundle: RuntimeBundle, spec: EpisodeSpec) -> EpisodeTrace:
    """Alternate planner and simulated human until the merge resolves."""
    model = bundle.model
    game = bundle.game
    grid = game.grid
    theta_idx = bundle.space.index(spec.true_theta)
    pol_true = bundle.solution.policy(HUMAN, spec.true_theta.k, spec.true_theta.lam)

    env_ss, plan_ss = np.random.SeedSequence(spec.seed).spawn(2)
    rng_env = np.random.default_rng(env_ss)
    planner_seed = int(plan_ss.generate_state(1)[0])

    params = spec.planner
    if spec.robot_mode == "blp1":
        params = PlannerParams(**{**params.__dict__, "eta0": 0.0, "seed": planner_seed})
    else:
        params = PlannerParams(**{**params.__dict__, "seed": planner_seed})
    planner = Planner(model, params)
    rng_robot = np.random.default_rng(planner_seed)  # for the ql-k robot mode
    if spec.robot_mode == "qlk":
        pol_robot = bundle.solution.policy(ROBOT, spec.robot_k, 1.0)

    s = initial_state(bundle, spec, rng_env)
    belief = bundle.prior_belief(s)
    spec_doc = {
        "true_theta": {"k": spec.true_theta.k, "lambda": spec.true_theta.lam},
        "robot_mode": spec.robot_mode,
        "robot_k": spec.robot_k,
        "label": spec.label(),
        "cap": spec.cap,
        "seed": spec.seed,
        "planner": {
            "horizon": params.horizon, "step_risk": params.step_risk,
            "total_risk": params.total_risk, "eta0": params.eta0,
            "budget_ms": params.budget_ms, "max_sims": params.max_sims,
            "rollout": params.rollout,
        },
    }
    rec = EpisodeRecorder(bundle, spec_doc, s, bundle.space.prior)

    # initial-state pathologies (already counted by the recorder constructor)
    if not game.is_safe(s):
        return rec.finish("collision", game.dt)
    if game.merged(s):
        return rec.finish("merged", game.dt)

    for t in range(spec.cap):
        s_idx = grid.to_index(s)
        diag_doc = None
        if spec.robot_mode == "qlk":
            a_r = _sample_row(pol_robot[s_idx], rng_robot)
        else:
            a_r, diag = planner.plan(belief)
            diag_doc = diag.to_json()
        a_h = _sample_row(pol_true[s_idx], rng_env)

        reward = belief_reward(model, belief, a_r)
        gain = info_gain(model, belief, a_r)
        s2_idx = int(model.successors(s_idx, a_r)[a_h])
        s2 = grid.from_index(s2_idx)

        reset = False
        try:
            belief = update_belief(model, belief, a_r, s2_idx)
        except ZeroLikelihoodError:
            belief = bundle.model.prior_belief(s2_idx)
            reset = True

        rec.add(StepRecord(
            t=t, state=s,
            a_r=game.actions_r[a_r], a_h=game.actions_h[a_h],
            belief=belief.to_json(grid, bundle.space),
            reward=reward, gain=gain, diag=diag_doc, belief_reset=reset,
        ))
        hard = rec.observe_state(s2)
        s = s2
        if hard is not None:
            return rec.finish(hard, game.dt)
        if rec.road_ended(s):
            return rec.finish(rec.classify_stall(), game.dt)
    return rec.finish(rec.classify_stall(), game.dt)


# ---------------------------------------------------------------------------
# Trace serialization (JSON lines, schema-versioned)


def _state_doc(s: JointState) -> dict:
    return {"x_r": s.x_r, "y_r": s.y_r, "x_h": s.x_h, "v_r": s.v_r, "v_h": s.v_h}


def write_trace(trace: EpisodeTrace, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(json.dumps({
            "schema": TRACE_SCHEMA,
            "config_hash": trace.config_hash,
            "spec": trace.spec,
            "initial": _state_doc(trace.initial),
            "prior": trace.prior,
        }) + "\n")
        for r in trace.records:
            fh.write(json.dumps({
                "t": r.t,
                "state": _state_doc(r.state),
                "a_r": {"accel": r.a_r.accel, "lat": r.a_r.lat},
                "a_h": {"accel": r.a_h.accel},
                "belief": r.belief,
                "reward": r.reward,
                "info_gain": r.gain,
                "diag": r.diag,
                "belief_reset": r.belief_reset,
            }) + "\n")
        fh.write(json.dumps({
            "outcome": trace.outcome,
            "tm": trace.tm,
            "steps": trace.steps,
            "min_gap": None if trace.min_gap == float("inf") else trace.min_gap,
            "partial": trace.partial,
        }) + "\n")
    return path


class TraceFormatError(ValueError):
    pass


def read_trace(path: str | Path) -> dict:
    lines = [json.loads(line) for line in Path(path).read_text().splitlines() if line]
    if not lines or lines[0].get("schema") != TRACE_SCHEMA:
        raise TraceFormatError(f"{path} is not a {TRACE_SCHEMA} trace")
    if len(lines) < 2 or "outcome" not in lines[-1]:
        raise TraceFormatError(f"{path} is truncated (no footer)")
    return {"header": lines[0], "steps": lines[1:-1], "footer": lines[-1]}


def replay_states(trace_doc: dict, game) -> bool:
    """Re-step the recorded actions and check each successor matches."""
    from .game import ActionPair

    steps = trace_doc["steps"]
    for i, step in enumerate(steps):
        s = JointState(**step["state"])
        pair = ActionPair(
            robot=OwnAction(step["a_r"]["accel"], step["a_r"]["lat"]),
            human=OwnAction(step["a_h"]["accel"]),
        )
        s2 = game.step_dynamics(s, pair)
        nxt = (JointState(**steps[i + 1]["state"]) if i + 1 < len(steps)
               else JointState(**step["belief"]["state"]))
        if s2 != nxt:
            return False
    return True
