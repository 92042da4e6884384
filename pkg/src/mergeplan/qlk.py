"""Quantal level-k dynamic programming over the merge grid.

Builds, for every agent, reasoning level, and rationality coefficient, the
tabular value function (via value iteration on the grid) and the quantal
policy (softmax over Q-rows with inverse temperature lambda). Level 0 is the
non-strategic seed: a greedy single-agent policy that treats the opponent as
a static obstacle. Level k best-responds quantally to the level k-1 policy of
the opponent, assuming the opponent shares its own lambda.

Tables persist to a single ``.npz`` bundle stamped with the game-config hash
so stale caches are rejected at load time.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import LatentConfig, config_hash
from .game import HUMAN, ROBOT, ActionPair, JointState, MergeGame, OwnAction

TABLE_FORMAT_VERSION = 1


class SolverError(RuntimeError):
    pass


class NonConvergenceError(SolverError):
    """Value iteration failed to reach tolerance within the sweep cap."""


class MissingTableError(KeyError):
    """A required policy/value table has not been solved or loaded."""


class TableMismatchError(RuntimeError):
    """Loaded tables were solved for a different game configuration."""


@dataclass(frozen=True)
class LatentState:
    """Human cognitive state: intelligence level and rationality coefficient."""

    k: int
    lam: float


class LatentSpace:
    """Finite hypothesis set Theta = levels x rationality coefficients."""

    def __init__(self, ks, lambdas, prior=None):
        self.types: tuple[LatentState, ...] = tuple(
            LatentState(int(k), float(lam)) for k in ks for lam in lambdas
        )
        self._index = {t: i for i, t in enumerate(self.types)}
        if prior is None:
            self.prior = np.full(len(self.types), 1.0 / len(self.types))
        else:
            self.prior = np.asarray(prior, dtype=float)
        self.k_values: tuple[int, ...] = tuple(sorted({t.k for t in self.types}))
        self._k_proj = np.zeros((len(self.k_values), len(self.types)))
        for i, t in enumerate(self.types):
            self._k_proj[self.k_values.index(t.k), i] = 1.0

    @classmethod
    def from_config(cls, cfg: LatentConfig) -> "LatentSpace":
        return cls(cfg.ks, cfg.lambdas, cfg.prior)

    def __len__(self) -> int:
        return len(self.types)

    def __iter__(self):
        return iter(self.types)

    def index(self, theta: LatentState) -> int:
        try:
            return self._index[theta]
        except KeyError:
            raise MissingTableError(f"{theta} is not in the latent space {self.types}")

    def k_projection(self) -> np.ndarray:
        """Matrix mapping a distribution over Theta to one over levels."""
        return self._k_proj


@dataclass
class ValueTable:
    agent: str
    k: int
    lam: float | None
    values: np.ndarray  # float64 [N]


@dataclass
class PolicyTable:
    agent: str
    k: int
    lam: float | None
    probs: np.ndarray  # float64 [N, A_own], rows sum to 1


def quantal_response(q_row, lam: float) -> np.ndarray:
    """Softmax over a Q-row with inverse temperature lam (max-subtracted)."""
    q = np.asarray(q_row, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError(f"non-finite Q entries: {q}")
    if lam <= 0:
        raise ValueError("rationality coefficient must be positive")
    z = np.exp(lam * (q - q.max()))
    return z / z.sum()


def _quantal_rows(Q: np.ndarray, lam: float, terminal: np.ndarray) -> np.ndarray:
    """Row-wise quantal response; terminal rows get a uniform placeholder."""
    z = np.exp(lam * (Q - Q.max(axis=1, keepdims=True)))
    probs = z / z.sum(axis=1, keepdims=True)
    probs[terminal] = 1.0 / Q.shape[1]
    return probs


def _expected_q(succ_io, r_state, comfort, opp_probs, gamma, V) -> np.ndarray:
    """Q[s, a_own] = E_opp[ r(s') + gamma * V(s') ] + comfort(a_own).

    ``succ_io`` is int32 [A_own, A_opp, N]; V is zero at terminal states so
    absorbing states contribute their entry reward only.
    """
    a_own, a_opp, n = succ_io.shape
    Q = np.empty((n, a_own))
    for i in range(a_own):
        acc = np.zeros(n)
        for j in range(a_opp):
            sp = succ_io[i, j]
            acc += opp_probs[:, j] * (r_state[sp] + gamma * V[sp])
        Q[:, i] = acc + comfort[i]
    return Q


def _value_iteration(succ_io, r_state, comfort, opp_probs, gamma, tol, max_sweeps, terminal):
    V = np.zeros(r_state.shape[0])
    for sweep in range(max_sweeps):
        Q = _expected_q(succ_io, r_state, comfort, opp_probs, gamma, V)
        V_new = Q.max(axis=1)
        V_new[terminal] = 0.0
        resid = float(np.abs(V_new - V).max())
        V = V_new
        if resid <= tol:
            return V, sweep + 1
    raise NonConvergenceError(
        f"value iteration stuck above tol={tol} after {max_sweeps} sweeps "
        "(check gamma and reward scales)"
    )


def _greedy_single_agent(succ_own, r_state, comfort, gamma, tol, max_sweeps, terminal,
                         lam0: float | None = None):
    """Frozen-opponent MDP solved greedily; the policy is a point mass on the
    greedy action, or a quantal (softmax) response when ``lam0`` is given."""
    a_own, n = succ_own.shape
    V = np.zeros(n)
    for sweep in range(max_sweeps):
        Q = np.empty((n, a_own))
        for i in range(a_own):
            sp = succ_own[i]
            Q[:, i] = r_state[sp] + gamma * V[sp] + comfort[i]
        V_new = Q.max(axis=1)
        V_new[terminal] = 0.0
        resid = float(np.abs(V_new - V).max())
        V = V_new
        if resid <= tol:
            break
    else:
        raise NonConvergenceError(f"level-0 iteration exceeded {max_sweeps} sweeps")
    if lam0 is not None:
        return V, _quantal_rows(Q, lam0, terminal)
    best = Q.argmax(axis=1)  # ties resolve to the first (fixed action order)
    probs = np.zeros((n, a_own))
    probs[np.arange(n), best] = 1.0
    probs[terminal] = 1.0 / a_own
    return V, probs


class QlkSolution:
    """All solved tables for one game configuration."""

    def __init__(self, cfg_hash: str, k_max: int, lambdas: tuple[float, ...],
                 lam_solved: tuple[float, ...], gamma: float, meta: dict | None = None):
        self.cfg_hash = cfg_hash
        self.k_max = k_max
        self.lambdas = lambdas
        self.lam_solved = lam_solved
        self.gamma = gamma
        self.meta = meta or {}
        self._values: dict[tuple, ValueTable] = {}
        self._policies: dict[tuple, PolicyTable] = {}

    @staticmethod
    def _key(agent: str, k: int, lam: float | None):
        return (agent, int(k), None if k == 0 else float(lam))

    def add(self, table):
        key = self._key(table.agent, table.k, table.lam)
        if isinstance(table, ValueTable):
            self._values[key] = table
        else:
            self._policies[key] = table

    def value(self, agent: str, k: int, lam: float | None) -> np.ndarray:
        key = self._key(agent, k, lam)
        try:
            return self._values[key].values
        except KeyError:
            raise MissingTableError(
                f"no value table for {key}; run the `solve` subcommand first"
            )

    def policy(self, agent: str, k: int, lam: float | None) -> np.ndarray:
        key = self._key(agent, k, lam)
        try:
            return self._policies[key].probs
        except KeyError:
            raise MissingTableError(
                f"no policy table for {key}; run the `solve` subcommand first"
            )

    def policy_keys(self):
        return sorted(self._policies, key=str)


def solve(game: MergeGame, k_max: int | None = None, lambdas=None,
          gamma: float | None = None, tol: float | None = None,
          max_sweeps: int | None = None, workers: int = 1,
          progress=None) -> QlkSolution:
    """Run quantal level-k dynamic programming for both agents.

    Levels are computed in ascending order (each consumes the previous one);
    within a level the independent (agent, lambda) problems may run on a
    thread pool. On top of the requested lambdas, the lambda=1 chain is always
    solved together with one extra robot level: the planner's terminal values
    assume the robot responds one level above every human hypothesis at full
    rationality.
    """
    cfg = game.cfg
    k_max = cfg.k_max if k_max is None else k_max
    lambdas = tuple(cfg.latent.lambdas) if lambdas is None else tuple(lambdas)
    gamma = cfg.solver.gamma if gamma is None else gamma
    tol = cfg.solver.tol if tol is None else tol
    max_sweeps = cfg.solver.max_sweeps if max_sweeps is None else max_sweeps
    if not lambdas:
        raise SolverError("empty rationality-coefficient set")
    lam_solved = tuple(sorted(set(float(l) for l in lambdas) | {1.0}))

    tables = game.tables()
    t = tables.terminal
    sol = QlkSolution(config_hash(cfg), k_max, lambdas, lam_solved, gamma)
    t0 = time.perf_counter()

    def say(msg):
        if progress:
            progress(msg)

    # Level 0: non-strategic seeds. The seed is "aggressive": its collision
    # sensitivity is scaled down (or removed in blind mode), which is what
    # makes a level-1 reasoner cautious around it.
    for agent in (ROBOT, HUMAN):
        r = tables.r_state[agent]
        w_coll = game.weights[agent].effective()[0]
        if cfg.solver.level0 == "blind":
            r = r - w_coll * tables.unsafe
        elif cfg.solver.level0_collision_scale != 1.0:
            r = r - (1.0 - cfg.solver.level0_collision_scale) * w_coll * tables.unsafe
        _, probs = _greedy_single_agent(
            tables.succ_frozen[agent], r, tables.comfort[agent],
            gamma, tol, max_sweeps, t, cfg.solver.level0_lambda,
        )
        sol.add(PolicyTable(agent, 0, None, probs))
        say(f"level 0 {agent} done")

    def succ_for(agent: str) -> np.ndarray:
        # [A_own, A_opp, N] view of the joint successor table
        return tables.succ if agent == ROBOT else tables.succ.transpose(1, 0, 2)

    def solve_one(agent: str, k: int, lam: float):
        opp = HUMAN if agent == ROBOT else ROBOT
        opp_pi = sol.policy(opp, k - 1, lam)
        V, sweeps = _value_iteration(
            succ_for(agent), tables.r_state[agent], tables.comfort[agent],
            opp_pi, gamma, tol, max_sweeps, t,
        )
        Q = _expected_q(
            succ_for(agent), tables.r_state[agent], tables.comfort[agent],
            opp_pi, gamma, V,
        )
        probs = _quantal_rows(Q, lam, t)
        return agent, k, lam, V, probs, sweeps

    for k in range(1, k_max + 1):
        jobs = [(agent, k, lam) for agent in (ROBOT, HUMAN) for lam in lam_solved]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda j: solve_one(*j), jobs))
        else:
            results = [solve_one(*j) for j in jobs]
        for agent, kk, lam, V, probs, sweeps in results:
            sol.add(ValueTable(agent, kk, lam, V))
            sol.add(PolicyTable(agent, kk, lam, probs))
            say(f"level {kk} {agent} lam={lam} converged in {sweeps} sweeps")

    # One extra robot level at lambda=1 for the planner's terminal values.
    agent, kk, lam, V, probs, sweeps = solve_one(ROBOT, k_max + 1, 1.0)
    sol.add(ValueTable(agent, kk, lam, V))
    sol.add(PolicyTable(agent, kk, lam, probs))
    say(f"level {kk} {agent} lam=1.0 converged in {sweeps} sweeps")

    sol.meta = {
        "solve_seconds": round(time.perf_counter() - t0, 3),
        "grid_shape": list(game.grid.shape),
    }
    return sol


def q_value(game: MergeGame, sol: QlkSolution, agent: str, k: int, lam: float,
            s: JointState, a_own: OwnAction, gamma: float | None = None) -> float:
    """Expected one-step lookahead for one own action against the modeled
    opponent: E_{a_opp ~ pi(k-1, lam)}[ r(s', a_own) + gamma * V(s') ]."""
    if k < 1:
        raise ValueError("q_value is defined for levels k >= 1")
    gamma = sol.gamma if gamma is None else gamma
    opp = HUMAN if agent == ROBOT else ROBOT
    opp_pi = sol.policy(opp, k - 1, lam)
    V = sol.value(agent, k, lam)
    s_idx = game.grid.to_index(s)
    w = game.weights[agent]
    total = 0.0
    for j, a_opp in enumerate(game.actions_of(opp)):
        if agent == ROBOT:
            pair = ActionPair(robot=a_own, human=a_opp)
        else:
            pair = ActionPair(robot=a_opp, human=a_own)
        s_next = game.step_dynamics(s, pair)
        total += opp_pi[s_idx, j] * (
            game.reward(s_next, w, a_own) + gamma * V[game.grid.to_index(s_next)]
        )
    return float(total)


# ---------------------------------------------------------------------------
# Persistence


def _lam_key(lam: float | None) -> str:
    return "-" if lam is None else repr(float(lam))


def save_tables(sol: QlkSolution, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    index = []
    for kind, store in (("V", sol._values), ("pi", sol._policies)):
        for (agent, k, lam), table in store.items():
            name = f"{kind}__{agent}__{k}__{_lam_key(lam)}"
            arrays[name] = table.values if kind == "V" else table.probs
            index.append(name)
    meta = {
        "format_version": TABLE_FORMAT_VERSION,
        "tool_version": __version__,
        "config_hash": sol.cfg_hash,
        "k_max": sol.k_max,
        "lambdas": list(sol.lambdas),
        "lam_solved": list(sol.lam_solved),
        "gamma": sol.gamma,
        "index": index,
        "extra": sol.meta,
    }
    np.savez_compressed(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    return path


def load_tables(path: str | Path, expected_hash: str | None = None) -> QlkSolution:
    path = Path(path)
    if not path.exists():
        raise MissingTableError(f"no table file at {path}; run the `solve` subcommand")
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]))
        if meta["format_version"] != TABLE_FORMAT_VERSION:
            raise TableMismatchError(
                f"table format {meta['format_version']} unsupported"
            )
        if expected_hash is not None and meta["config_hash"] != expected_hash:
            raise TableMismatchError(
                f"tables at {path} were solved for config {meta['config_hash']}, "
                f"expected {expected_hash}; re-run `solve`"
            )
        sol = QlkSolution(
            meta["config_hash"], meta["k_max"], tuple(meta["lambdas"]),
            tuple(meta["lam_solved"]), meta["gamma"], meta.get("extra", {}),
        )
        for name in meta["index"]:
            kind, agent, k, lam = name.split("__")
            lam_val = None if lam == "-" else float(lam)
            arr = data[name]
            if kind == "V":
                sol.add(ValueTable(agent, int(k), lam_val, arr))
            else:
                sol.add(PolicyTable(agent, int(k), lam_val, arr))
    return sol
