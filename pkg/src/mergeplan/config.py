"""Scenario configuration: grid axes, action sets, rewards, solver and planner knobs.

A single YAML document configures every layer of the stack. All other modules
consume the parsed, validated form defined here. The configuration hash ties
solved policy/value tables to the exact game they were solved for.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

SCHEMA_VERSION = 1

#: Order of the shared feature vector produced by the game model. Per-agent
#: reward weights are vectors over this list.
FEATURE_NAMES = (
    "collision",      # 1 if the two car footprints overlap
    "speed_r",        # robot speed / v_max
    "speed_h",        # human speed / v_max
    "lane_r",         # 1 if the robot sits on the target (upper) lane center
    "end_r",          # 1 if the robot reached the end of the road segment
    "end_h",          # 1 if the human reached the end of the road segment
    "accel_cost",     # -|own longitudinal accel| / accel_scale (0 without an action)
    "lat_cost",       # -|own lateral speed| / lat_scale (0 without an action)
)


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration documents."""


@dataclass(frozen=True)
class AxisSpec:
    """Uniformly spaced grid axis."""

    lo: float
    hi: float
    cells: int

    def __post_init__(self):
        if self.cells < 1:
            raise ConfigError(f"axis needs >=1 cell, got {self.cells}")
        if self.cells > 1 and not self.hi > self.lo:
            raise ConfigError(f"axis range empty: [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class GridConfig:
    x: AxisSpec          # longitudinal axis, shared by both cars
    v_r: AxisSpec        # robot longitudinal speed axis
    v_h: AxisSpec        # human longitudinal speed axis (upper lane flows faster)
    y_cells: int = 6     # lateral cells for the robot, lower to upper lane center
    lane_width: float = 3.6

    def __post_init__(self):
        if self.y_cells < 2:
            raise ConfigError("need at least 2 lateral cells (lower and upper lane)")
        if self.lane_width <= 0:
            raise ConfigError("lane_width must be positive")


@dataclass(frozen=True)
class CarGeometry:
    """Safety envelope of a car: physical body plus required headway slack."""

    length: float = 9.0
    width: float = 1.8


@dataclass(frozen=True)
class ActionConfig:
    """Discrete action menus.

    The human picks a longitudinal acceleration from ``accels``. The robot
    has the same acceleration menu plus lateral-move actions toward the upper
    lane at ``lateral_speed`` (m/s); ``lateral_accels`` lists which
    accelerations can be combined with lateral motion (default: merging is a
    constant-speed maneuver, which is what makes a mid-merge car vulnerable
    to an accelerating opponent). Acceleration magnitudes must satisfy
    ``|a|*dt > v_spacing/2`` or grid snapping turns them into no-ops.
    """

    accels: tuple[float, ...] = (-5.0, 0.0, 5.0)
    lateral_speed: float | None = None  # None -> lane_width / (2*dt)
    lateral_accels: tuple[float, ...] = (-5.0,)

    def __post_init__(self):
        if not self.accels:
            raise ConfigError("empty acceleration menu")
        if 0.0 not in self.accels:
            raise ConfigError("acceleration menu must contain 0 (maintain)")
        if any(a not in self.accels for a in self.lateral_accels):
            raise ConfigError("lateral_accels must be a subset of accels")
        if not self.lateral_accels:
            raise ConfigError("at least one acceleration must allow lateral motion")


@dataclass(frozen=True)
class RewardConfig:
    """Per-agent weights over FEATURE_NAMES (missing names default to 0)."""

    weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.weights) - set(FEATURE_NAMES)
        if unknown:
            raise ConfigError(f"unknown reward features: {sorted(unknown)}")

    def vector(self) -> tuple[float, ...]:
        return tuple(float(self.weights.get(name, 0.0)) for name in FEATURE_NAMES)


@dataclass(frozen=True)
class LatentConfig:
    """Hypothesis space over the human's cognitive state (k, lambda)."""

    ks: tuple[int, ...] = (1, 2)
    lambdas: tuple[float, ...] = (0.5, 0.8, 1.0)
    prior: tuple[float, ...] | None = None  # None -> uniform

    def __post_init__(self):
        if not self.ks or not self.lambdas:
            raise ConfigError("latent space must contain at least one (k, lambda)")
        if any(k < 0 for k in self.ks):
            raise ConfigError("intelligence levels must be >= 0")
        if any(not 0.0 < lam <= 1.0 for lam in self.lambdas):
            raise ConfigError("rationality coefficients must lie in (0, 1]")
        n = len(self.ks) * len(self.lambdas)
        if self.prior is not None:
            if len(self.prior) != n:
                raise ConfigError(f"prior length {len(self.prior)} != |Theta| {n}")
            if any(p < 0 for p in self.prior) or abs(sum(self.prior) - 1.0) > 1e-9:
                raise ConfigError("prior must be a probability vector")


@dataclass(frozen=True)
class SolverConfig:
    gamma: float = 0.95
    tol: float = 1e-6
    max_sweeps: int = 10_000
    level0: str = "obstacle"   # "obstacle": frozen-opponent MDP; "blind": opponent ignored
    level0_lambda: float | None = 0.2  # None: greedy point mass; float: quantal level 0
    level0_collision_scale: float = 0.1  # collision-penalty discount in the level-0 seed
    absorbing: bool = True     # merged / road-end states absorb with zero continuation

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.level0 not in ("obstacle", "blind"):
            raise ConfigError(f"unknown level0 mode: {self.level0}")
        if self.level0_lambda is not None and self.level0_lambda <= 0:
            raise ConfigError("level0_lambda must be positive (or null for greedy)")
        if not 0.0 <= self.level0_collision_scale <= 1.0:
            raise ConfigError("level0_collision_scale must lie in [0, 1]")


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 8
    step_risk: float = 1.0 / 160.0
    total_risk: float = 0.05
    eta0: float = 10.0
    budget_ms: float = 125.0
    max_sims: int | None = None    # simulation-count cap for deterministic runs
    explore: float | None = None   # None -> span of achievable step reward
    rollout: str = "uniform"       # "uniform" | "qlk"

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("planning horizon must be >= 1")
        if self.max_sims is not None and self.max_sims < 1:
            raise ConfigError("max_sims must be >= 1 when set")
        if self.horizon * self.step_risk > self.total_risk + 1e-12:
            raise ConfigError(
                f"per-step risk budgets exceed the total: "
                f"{self.horizon} * {self.step_risk} > {self.total_risk}"
            )
        if self.budget_ms <= 0:
            raise ConfigError("budget_ms must be positive")
        if self.rollout not in ("uniform", "qlk"):
            raise ConfigError(f"unknown rollout policy: {self.rollout}")


@dataclass(frozen=True)
class EpisodeConfig:
    cap: int = 60
    deadlock_window: int = 8      # steps over which a frozen gap means deadlock
    tick_ms: float = 500.0        # interaction-service environment tick
    service_budget_ms: float = 250.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Initial conditions for one episode family."""

    x_r: float = 20.0
    x_h: float = 20.0
    v_r: float = 12.0
    v_h: float = 12.0
    true_k: int = 1
    true_lambda: float = 0.8
    random_offset: float | None = None  # human start uniform within +/- this of x_r


@dataclass(frozen=True)
class GameConfig:
    """Everything needed to build the game, solve it, and run episodes."""

    grid: GridConfig
    car: CarGeometry = CarGeometry()
    actions: ActionConfig = ActionConfig()
    dt: float = 0.5
    k_max: int = 2
    robot_rewards: RewardConfig = field(
        default_factory=lambda: RewardConfig(
            {
                "collision": -300.0,
                "speed_r": 0.5,
                "lane_r": 90.0,
                "accel_cost": 0.9,
                "lat_cost": 0.45,
            }
        )
    )
    human_rewards: RewardConfig = field(
        default_factory=lambda: RewardConfig(
            {"collision": -300.0, "speed_h": 6.0, "accel_cost": 0.9, "end_h": 30.0}
        )
    )
    latent: LatentConfig = LatentConfig()
    solver: SolverConfig = SolverConfig()
    planner: PlannerConfig = PlannerConfig()
    episode: EpisodeConfig = EpisodeConfig()
    scenario: ScenarioConfig = ScenarioConfig()

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if max(self.latent.ks) > self.k_max:
            raise ConfigError("latent space references a level above k_max")
        self.validate_actions()

    @property
    def lateral_speed(self) -> float:
        if self.actions.lateral_speed is not None:
            return self.actions.lateral_speed
        return self.grid.lane_width / (2.0 * self.dt)

    def validate_actions(self):
        for name, v in (("v_r", self.grid.v_r), ("v_h", self.grid.v_h)):
            if v.cells > 1:
                spacing = (v.hi - v.lo) / (v.cells - 1)
                for a in self.actions.accels:
                    if a != 0.0 and abs(a) * self.dt <= spacing / 2.0:
                        raise ConfigError(
                            f"accel {a} moves {abs(a) * self.dt} m/s but the {name} "
                            f"grid spacing is {spacing}; snapping makes it a no-op"
                        )


def _to_plain(cfg: GameConfig) -> dict:
    doc = asdict(cfg)
    doc["schema_version"] = SCHEMA_VERSION
    return doc


def config_hash(cfg: GameConfig) -> str:
    """Stable digest of the parts that determine the solved game.

    Planner/episode/scenario knobs do not invalidate solved tables, so they
    are excluded.
    """
    doc = _to_plain(cfg)
    for volatile in ("planner", "episode", "scenario"):
        doc.pop(volatile, None)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_config(cfg: GameConfig, path: str | Path):
    Path(path).write_text(yaml.safe_dump(_to_plain(cfg), sort_keys=False))


def _axis(doc: dict, key: str) -> AxisSpec:
    sub = doc[key]
    return AxisSpec(lo=float(sub["lo"]), hi=float(sub["hi"]), cells=int(sub["cells"]))


def parse_config(doc: dict) -> GameConfig:
    """Build a validated GameConfig from a plain mapping (parsed YAML)."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration document must be a mapping")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    try:
        grid_doc = doc["grid"]
        grid = GridConfig(
            x=_axis(grid_doc, "x"),
            v_r=_axis(grid_doc, "v_r"),
            v_h=_axis(grid_doc, "v_h"),
            y_cells=int(grid_doc.get("y_cells", 6)),
            lane_width=float(grid_doc.get("lane_width", 3.6)),
        )
        kwargs = {}
        if "car" in doc:
            kwargs["car"] = CarGeometry(**doc["car"])
        if "actions" in doc:
            act = dict(doc["actions"])
            for key in ("accels", "lateral_accels"):
                if act.get(key) is not None:
                    act[key] = tuple(float(a) for a in act[key])
            kwargs["actions"] = ActionConfig(**act)
        if "rewards" in doc:
            rew = doc["rewards"]
            if "robot" in rew:
                kwargs["robot_rewards"] = RewardConfig(dict(rew["robot"]))
            if "human" in rew:
                kwargs["human_rewards"] = RewardConfig(dict(rew["human"]))
        if "latent" in doc:
            lat = dict(doc["latent"])
            for key in ("ks", "lambdas", "prior"):
                if lat.get(key) is not None:
                    lat[key] = tuple(lat[key])
            kwargs["latent"] = LatentConfig(**lat)
        for key, cls in (
            ("solver", SolverConfig),
            ("planner", PlannerConfig),
            ("episode", EpisodeConfig),
            ("scenario", ScenarioConfig),
        ):
            if key in doc:
                kwargs[key.replace("solver", "solver")] = cls(**doc[key])
        return GameConfig(
            grid=grid,
            dt=float(doc.get("dt", 0.5)),
            k_max=int(doc.get("k_max", 2)),
            **kwargs,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration document: {exc}") from exc


def load_config(path: str | Path) -> GameConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    return parse_config(yaml.safe_load(path.read_text()))


# ---------------------------------------------------------------------------
# Built-in profiles


def full_profile() -> GameConfig:
    """Paper-scale grid: 40 x 6 x 40 x 6 x 6."""
    return GameConfig(
        grid=GridConfig(
            x=AxisSpec(0.0, 195.0, 40),
            v_r=AxisSpec(2.0, 22.0, 6),
            v_h=AxisSpec(2.0, 22.0, 6),
        ),
        scenario=ScenarioConfig(x_r=50.0, x_h=50.0, v_r=22.0, v_h=22.0),
    )


def desk_profile() -> GameConfig:
    """Deskside grid: 20 x 6 x 20 x 4 x 4, quick to solve and simulate."""
    return GameConfig(
        grid=GridConfig(
            x=AxisSpec(0.0, 145.0, 30),
            v_r=AxisSpec(2.0, 22.0, 6),
            v_h=AxisSpec(6.0, 22.0, 5),
        ),
        scenario=ScenarioConfig(x_r=20.0, x_h=20.0, v_r=22.0, v_h=22.0),
    )


def mini_profile() -> GameConfig:
    """Tiny 4 x 2 x 4 x 2 x 2 grid for brute-force oracle comparisons."""
    return GameConfig(
        grid=GridConfig(
            x=AxisSpec(0.0, 15.0, 4),
            v_r=AxisSpec(8.0, 12.0, 2),
            v_h=AxisSpec(8.0, 12.0, 2),
            y_cells=2,
        ),
        actions=ActionConfig(accels=(-5.0, 0.0, 5.0), lateral_speed=7.2),
        latent=LatentConfig(ks=(1, 2), lambdas=(1.0,)),
        scenario=ScenarioConfig(x_r=0.0, x_h=5.0, v_r=8.0, v_h=8.0, true_lambda=1.0),
    )


PROFILES = {"full": full_profile, "desk": desk_profile, "mini": mini_profile}


def builtin_profile(name: str) -> GameConfig:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choices: {sorted(PROFILES)}")
