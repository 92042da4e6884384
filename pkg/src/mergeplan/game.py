"""Two-car merge game on a finite grid: states, dynamics, rewards, safety.

The robot starts in the lower lane and must merge into the upper lane, which
is occupied by the human-driven car. Physical state is (x_r, y_r, x_h, v_r,
v_h) on a uniform grid; both cars share the longitudinal and speed axes, and
the human is laterally fixed to the upper lane center. Dynamics are a single
Euler step of the kinematic model followed by per-axis nearest-grid snapping,
so every operation here is total, deterministic, and closed over the grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FEATURE_NAMES, GameConfig

ROBOT = "R"
HUMAN = "H"
I_COLLISION = FEATURE_NAMES.index("collision")


@dataclass(frozen=True)
class JointState:
    """Fully observable physical state; every field lies on its grid axis."""

    x_r: float
    y_r: float
    x_h: float
    v_r: float
    v_h: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x_r, self.y_r, self.x_h, self.v_r, self.v_h)


@dataclass(frozen=True)
class OwnAction:
    """One agent's control: longitudinal acceleration and lateral speed.

    Human actions always carry ``lat == 0``; the robot's merge action carries
    the configured positive lateral speed.
    """

    accel: float
    lat: float = 0.0


@dataclass(frozen=True)
class ActionPair:
    robot: OwnAction
    human: OwnAction


@dataclass(frozen=True)
class RewardWeights:
    """Weight vector over FEATURE_NAMES plus the safety-deactivation switch."""

    omega: tuple[float, ...]
    deactivate_safety_feature: bool = False

    def __post_init__(self):
        if len(self.omega) != len(FEATURE_NAMES):
            raise ValueError(
                f"expected {len(FEATURE_NAMES)} weights, got {len(self.omega)}"
            )

    def effective(self) -> np.ndarray:
        w = np.asarray(self.omega, dtype=float).copy()
        if self.deactivate_safety_feature:
            w[I_COLLISION] = 0.0
        return w


def _axis_values(lo: float, hi: float, cells: int) -> np.ndarray:
    if cells == 1:
        return np.array([lo], dtype=float)
    return np.linspace(lo, hi, cells)


def snap_to_axis(values: np.ndarray, raw) -> np.ndarray:
    """Nearest grid index per element; ties break toward the smaller index."""
    raw = np.asarray(raw, dtype=float)
    n = len(values)
    pos = np.searchsorted(values, raw)
    lo = np.clip(pos - 1, 0, n - 1)
    hi = np.clip(pos, 0, n - 1)
    pick_lo = np.abs(raw - values[lo]) <= np.abs(values[hi] - raw)
    return np.where(pick_lo, lo, hi).astype(np.int64)


class Grid:
    """Uniform 5-axis grid with flat-index round trips."""

    def __init__(self, cfg: GameConfig):
        g = cfg.grid
        self.x = _axis_values(g.x.lo, g.x.hi, g.x.cells)
        self.y = _axis_values(0.0, g.lane_width, g.y_cells)
        self.v_r = _axis_values(g.v_r.lo, g.v_r.hi, g.v_r.cells)
        self.v_h = _axis_values(g.v_h.lo, g.v_h.hi, g.v_h.cells)
        self.y_h = float(self.y[-1])  # human fixed at the upper lane center
        self.shape = (len(self.x), len(self.y), len(self.x),
                      len(self.v_r), len(self.v_h))
        self.n_states = int(np.prod(self.shape))
        self.x_spacing = float(self.x[1] - self.x[0]) if len(self.x) > 1 else 0.0

    def axes(self) -> tuple[np.ndarray, ...]:
        return (self.x, self.y, self.x, self.v_r, self.v_h)

    def to_index(self, s: JointState) -> int:
        idx = []
        for value, axis in zip(s.as_tuple(), self.axes()):
            hits = np.flatnonzero(np.isclose(axis, value, rtol=0.0, atol=1e-9))
            if len(hits) != 1:
                raise ValueError(f"{value} is not on the grid axis {axis}")
            idx.append(int(hits[0]))
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def from_index(self, i: int) -> JointState:
        if not 0 <= i < self.n_states:
            raise IndexError(f"state index {i} outside [0, {self.n_states})")
        parts = np.unravel_index(i, self.shape)
        vals = [float(axis[p]) for axis, p in zip(self.axes(), parts)]
        return JointState(*vals)

    def snap(self, x_r, y_r, x_h, v_r, v_h) -> JointState:
        raws = (x_r, y_r, x_h, v_r, v_h)
        vals = [
            float(axis[snap_to_axis(axis, np.array([raw]))[0]])
            for axis, raw in zip(self.axes(), raws)
        ]
        return JointState(*vals)


@dataclass
class GameTables:
    """Dense per-state arrays for vectorized solving and fast planning.

    ``succ[i_ar, i_ah, s]`` is the flat successor index; ``r_state`` holds the
    state-only reward term per agent (own-action comfort costs are the
    per-action constants in ``comfort``).
    """

    succ: np.ndarray                      # int32 [A_R, A_H, N]
    succ_frozen: dict                     # agent -> int32 [A_own, N]
    unsafe: np.ndarray                    # bool [N]
    terminal: np.ndarray                  # bool [N]
    r_state: dict                         # agent -> float64 [N]
    comfort: dict                         # agent -> float64 [A_own]
    r_state_planner: np.ndarray           # robot rewards, safety deactivated
    comfort_r_planner: np.ndarray


class MergeGame:
    """Wires a GameConfig into concrete state/action/reward machinery."""

    def __init__(self, cfg: GameConfig):
        self.cfg = cfg
        self.grid = Grid(cfg)
        self.dt = cfg.dt
        lat = cfg.lateral_speed
        self.actions_h: tuple[OwnAction, ...] = tuple(
            OwnAction(a, 0.0) for a in cfg.actions.accels
        )
        self.actions_r: tuple[OwnAction, ...] = tuple(OwnAction(a, 0.0) for a in cfg.actions.accels) + tuple(
            OwnAction(a, lat) for a in cfg.actions.lateral_accels
        )
        self.accel_scale = max(abs(a) for a in cfg.actions.accels) or 1.0
        self.lat_scale = lat or 1.0
        self.weights = {
            ROBOT: RewardWeights(cfg.robot_rewards.vector()),
            HUMAN: RewardWeights(cfg.human_rewards.vector()),
        }
        self._tables: GameTables | None = None

    # -- dynamics -----------------------------------------------------------

    def euler(self, s: JointState, a: ActionPair, dt: float | None = None):
        """Raw continuous step before grid snapping (exposed for tests)."""
        dt = self.dt if dt is None else dt
        return (
            s.x_r + s.v_r * dt,
            s.y_r + a.robot.lat * dt,
            s.x_h + s.v_h * dt,
            s.v_r + a.robot.accel * dt,
            s.v_h + a.human.accel * dt,
        )

    def step_dynamics(self, s: JointState, a: ActionPair, dt: float | None = None) -> JointState:
        if dt is not None and dt <= 0:
            raise ValueError("dt must be positive")
        return self.grid.snap(*self.euler(s, a, dt))

    # -- rewards ------------------------------------------------------------

    def feature_vector(self, s: JointState, own_action: OwnAction | None = None) -> np.ndarray:
        """Shared feature vector; comfort entries need the acting agent's action."""
        g = self.grid
        phi = np.zeros(len(FEATURE_NAMES))
        phi[0] = 0.0 if self.is_safe(s) else 1.0
        phi[1] = s.v_r / (g.v_r[-1] if g.v_r[-1] != 0 else 1.0)
        phi[2] = s.v_h / (g.v_h[-1] if g.v_h[-1] != 0 else 1.0)
        phi[3] = 1.0 if s.y_r == g.y[-1] else 0.0
        phi[4] = 1.0 if s.x_r == g.x[-1] else 0.0
        phi[5] = 1.0 if s.x_h == g.x[-1] else 0.0
        if own_action is not None:
            phi[6] = -abs(own_action.accel) / self.accel_scale
            phi[7] = -abs(own_action.lat) / self.lat_scale
        return phi

    def reward(self, s: JointState, w: RewardWeights, own_action: OwnAction | None = None) -> float:
        return float(self.feature_vector(s, own_action) @ w.effective())

    # -- safety and termination ---------------------------------------------

    def is_safe(self, s: JointState) -> bool:
        """True iff the rectangular car footprints do not overlap."""
        dx = abs(s.x_r - s.x_h)
        dy = abs(s.y_r - self.grid.y_h)
        return dx >= self.cfg.car.length or dy >= self.cfg.car.width

    def is_terminal(self, s: JointState) -> bool:
        """Merge complete, road end reached, or collision: the game is over."""
        if not self.cfg.solver.absorbing:
            return False
        g = self.grid
        return (
            s.y_r == g.y[-1]
            or s.x_r == g.x[-1]
            or s.x_h == g.x[-1]
            or not self.is_safe(s)
        )

    def merged(self, s: JointState) -> bool:
        return s.y_r == self.grid.y[-1]

    # -- dense tables ---------------------------------------------------------

    def tables(self) -> GameTables:
        if self._tables is None:
            self._tables = self._build_tables()
        return self._tables

    def _state_columns(self):
        """Physical values of every grid state as five flat arrays."""
        parts = np.unravel_index(np.arange(self.grid.n_states), self.grid.shape)
        axes = self.grid.axes()
        return [axes[d][parts[d]] for d in range(5)]

    def _snap_indices(self, xr, yr, xh, vr, vh) -> np.ndarray:
        g = self.grid
        ix = snap_to_axis(g.x, xr)
        iy = snap_to_axis(g.y, yr)
        ih = snap_to_axis(g.x, xh)
        ivr = snap_to_axis(g.v_r, vr)
        ivh = snap_to_axis(g.v_h, vh)
        return np.ravel_multi_index((ix, iy, ih, ivr, ivh), g.shape).astype(np.int32)

    def _build_tables(self) -> GameTables:
        g = self.grid
        dt = self.dt
        xr, yr, xh, vr, vh = self._state_columns()

        n_ar, n_ah = len(self.actions_r), len(self.actions_h)
        succ = np.empty((n_ar, n_ah, g.n_states), dtype=np.int32)
        for i, ar in enumerate(self.actions_r):
            yr2 = yr + ar.lat * dt
            vr2 = vr + ar.accel * dt
            xr2 = xr + vr * dt
            for j, ah in enumerate(self.actions_h):
                succ[i, j] = self._snap_indices(
                    xr2, yr2, xh + vh * dt, vr2, vh + ah.accel * dt
                )

        # Frozen-opponent successors for the non-strategic level-0 model.
        succ_frozen = {}
        fr = np.empty((n_ar, g.n_states), dtype=np.int32)
        for i, ar in enumerate(self.actions_r):
            fr[i] = self._snap_indices(
                xr + vr * dt, yr + ar.lat * dt, xh, vr + ar.accel * dt, vh
            )
        succ_frozen[ROBOT] = fr
        fh = np.empty((n_ah, g.n_states), dtype=np.int32)
        for j, ah in enumerate(self.actions_h):
            fh[j] = self._snap_indices(xr, yr, xh + vh * dt, vr, vh + ah.accel * dt)
        succ_frozen[HUMAN] = fh

        unsafe = (np.abs(xr - xh) < self.cfg.car.length) & (
            np.abs(yr - g.y_h) < self.cfg.car.width
        )
        if self.cfg.solver.absorbing:
            terminal = (
                (yr == g.y[-1]) | (xr == g.x[-1]) | (xh == g.x[-1]) | unsafe
            )
        else:
            terminal = np.zeros(g.n_states, dtype=bool)

        phi_state = np.zeros((g.n_states, len(FEATURE_NAMES)))
        phi_state[:, 0] = unsafe.astype(float)
        phi_state[:, 1] = vr / (g.v_r[-1] if g.v_r[-1] != 0 else 1.0)
        phi_state[:, 2] = vh / (g.v_h[-1] if g.v_h[-1] != 0 else 1.0)
        phi_state[:, 3] = (yr == g.y[-1]).astype(float)
        phi_state[:, 4] = (xr == g.x[-1]).astype(float)
        phi_state[:, 5] = (xh == g.x[-1]).astype(float)

        r_state = {
            agent: phi_state @ self.weights[agent].effective()
            for agent in (ROBOT, HUMAN)
        }
        planner_w = RewardWeights(self.weights[ROBOT].omega, deactivate_safety_feature=True)
        r_state_planner = phi_state @ planner_w.effective()

        comfort = {}
        for agent, acts in ((ROBOT, self.actions_r), (HUMAN, self.actions_h)):
            w = self.weights[agent].effective()
            comfort[agent] = np.array(
                [
                    w[6] * (-abs(a.accel) / self.accel_scale)
                    + w[7] * (-abs(a.lat) / self.lat_scale)
                    for a in acts
                ]
            )
        wp = planner_w.effective()
        comfort_r_planner = np.array(
            [
                wp[6] * (-abs(a.accel) / self.accel_scale)
                + wp[7] * (-abs(a.lat) / self.lat_scale)
                for a in self.actions_r
            ]
        )

        return GameTables(
            succ=succ,
            succ_frozen=succ_frozen,
            unsafe=unsafe,
            terminal=terminal,
            r_state=r_state,
            comfort=comfort,
            r_state_planner=r_state_planner,
            comfort_r_planner=comfort_r_planner,
        )

    def actions_of(self, agent: str) -> tuple[OwnAction, ...]:
        return self.actions_r if agent == ROBOT else self.actions_h
