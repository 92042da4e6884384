"""Anytime open-loop chance-constrained Monte-Carlo belief tree search.

Search nodes store robot action *sequences* (open loop), not action-
observation histories: the tree stays small enough to replan in real time.
Leaf expansion admits only actions whose one-step predicted belief keeps the
probability of leaving the safe set below the per-step risk budget; selection
is UCB over sequence statistics; depth cutoffs are valued with the
pre-computed quantal level-(k+1) robot tables, mixed by the current belief
over the human's intelligence level. The immediate reward is the belief-space
task reward plus an entropy-scaled information-gain bonus, which is what makes
the search *probe* the human while it still matters.

The per-simulation path works on raw (state index, latent vector) pairs and
precomputed per-type risk tables; the public operations at the bottom mirror
the same math on the immutable Belief type.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .belief import Belief, predict_belief
from .config import PlannerConfig


class PlannerError(RuntimeError):
    pass


def _ent(values) -> float:
    """Shannon entropy of an iterable of probabilities, 0 log 0 := 0."""
    h = 0.0
    for p in values:
        if p > 0.0:
            h -= p * math.log(p)
    return h


@dataclass(frozen=True)
class PlannerParams:
    horizon: int = 8
    gamma: float = 0.95
    total_risk: float = 0.05
    step_risk: float = 1.0 / 160.0
    eta0: float = 10.0
    explore: float | None = None     # None -> span of achievable step reward
    budget_ms: float = 125.0
    max_sims: int | None = None      # deterministic alternative to the clock
    rollout: str = "uniform"         # "uniform" | "qlk"
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise PlannerError("horizon must be >= 1")
        if self.budget_ms <= 0:
            raise PlannerError("budget_ms must be positive")
        if self.horizon * self.step_risk > self.total_risk + 1e-12:
            raise PlannerError(
                f"risk allocation violated: {self.horizon} steps x "
                f"{self.step_risk} > {self.total_risk}"
            )
        if self.max_sims is not None and self.max_sims < 1:
            raise PlannerError("max_sims must be >= 1")
        if self.rollout not in ("uniform", "qlk"):
            raise PlannerError(f"unknown rollout policy {self.rollout!r}")

    @classmethod
    def from_config(cls, cfg: PlannerConfig, gamma: float, seed: int = 0,
                    **overrides) -> "PlannerParams":
        base = dict(
            horizon=cfg.horizon, gamma=gamma, total_risk=cfg.total_risk,
            step_risk=cfg.step_risk, eta0=cfg.eta0, explore=cfg.explore,
            budget_ms=cfg.budget_ms, max_sims=cfg.max_sims,
            rollout=cfg.rollout, seed=seed,
        )
        base.update(overrides)
        return cls(**base)


class SearchNode:
    """Open-loop tree node: an action sequence with running-mean statistics."""

    __slots__ = ("actions", "value", "visits", "children", "expanded",
                 "infeasible", "expansion_risk")

    def __init__(self, actions: tuple[int, ...], expansion_risk: float = 0.0):
        self.actions = actions
        self.value = 0.0
        self.visits = 0
        self.children: list[SearchNode] = []
        self.expanded = False
        self.infeasible = False
        self.expansion_risk = expansion_risk


@dataclass
class Diagnostics:
    sims: int = 0
    chosen: int = -1
    chosen_action: dict = field(default_factory=dict)
    chosen_risk: float = 0.0
    root_children: list = field(default_factory=list)
    eta: float = 0.0
    fallback: bool = False
    wall_ms: float = 0.0
    expanded_nodes: int = 0
    max_expanded_risk: float = 0.0
    risk_violations: int = 0
    returns: dict | None = None

    def to_json(self) -> dict:
        return {
            "sims": self.sims,
            "chosen": self.chosen,
            "chosen_action": self.chosen_action,
            "chosen_risk": self.chosen_risk,
            "root_children": self.root_children,
            "eta": self.eta,
            "fallback": self.fallback,
            "wall_ms": round(self.wall_ms, 3),
            "expanded_nodes": self.expanded_nodes,
            "max_expanded_risk": self.max_expanded_risk,
            "risk_violations": self.risk_violations,
        }


class Planner:
    """One search instance; owns its RNG and mutable tree, shares the tables.

    A single instance must not run two plan() calls concurrently; distinct
    instances may share the compiled model freely.
    """

    def __init__(self, model, params: PlannerParams):
        self.model = model
        self.params = params
        self._rng = np.random.default_rng(params.seed)
        n = model.n_theta
        self._h_max = math.log(n) if n > 1 else 0.0
        self._eta_on = params.eta0 > 0.0 and self._h_max > 0.0
        self._comfort = model.comfort_r.tolist()
        self._n_actions = model.n_actions_r
        self._explore = (params.explore if params.explore is not None
                         else self._default_explore())
        self._record: dict | None = None
        self._max_risk = 0.0
        self._expanded = 0
        self._violations = 0

    def _default_explore(self) -> float:
        span = float(self.model.reward_state.max() - self.model.reward_state.min())
        span += float(self.model.comfort_r.max() - self.model.comfort_r.min())
        if self._eta_on:
            span += self.params.eta0 * self._h_max
        return span if span > 0.0 else 1.0

    # -- raw one-step machinery (hot path) -----------------------------------

    def _risks(self, s: int, latent: np.ndarray) -> list[float]:
        return (self.model.risk_sa[s] @ latent).tolist()

    def _predict(self, s: int, latent: np.ndarray, a_r: int):
        ids = self.model.successors(s, a_r)
        W = latent[:, None] * self.model.human_probs(s)
        lst = ids.tolist()
        if len(set(lst)) != len(lst):
            # grid saturation can map several human actions to one successor
            uniq = sorted(set(lst))
            merged = np.zeros((W.shape[0], len(uniq)))
            for col, sid in enumerate(lst):
                merged[:, uniq.index(sid)] += W[:, col]
            return np.asarray(uniq, dtype=np.int64), merged
        return ids, W

    def _step(self, s: int, latent: np.ndarray, a_r: int):
        """Sample one transition; returns (augmented reward, s', latent')."""
        ids, W = self._predict(s, latent, a_r)
        q = W.sum(axis=0)
        qlist = q.tolist()
        total = 0.0
        for x in qlist:
            total += x
        u = self._rng.random() * total
        acc = 0.0
        j = -1
        for jj, x in enumerate(qlist):
            if x > 0.0:
                acc += x
                j = jj
                if u < acc:
                    break
        reward = float(q @ self.model.reward_state[ids]) + self._comfort[a_r]
        if self._eta_on:
            h_prior = _ent(latent.tolist())
            if h_prior > 0.0:
                # E_o[H(posterior)] = H(joint) - H(obs marginal)
                gain = h_prior - (_ent(W.ravel().tolist()) - _ent(qlist))
                reward += (self.params.eta0 * h_prior / self._h_max) * gain
        return reward, int(ids[j]), W[:, j] / q[j]

    def _terminal(self, s: int, latent: np.ndarray) -> float:
        pk = self.model.k_proj @ latent
        return float(self.model.vterm_sk[s] @ pk)

    # -- Monte-Carlo tree search ---------------------------------------------

    def _simulate(self, node: SearchNode, s: int, latent: np.ndarray, depth: int) -> float:
        p = self.params
        if self.model.terminal[s]:
            return 0.0  # absorbing: the entry reward was already collected
        if depth == p.horizon - 1:
            return self._terminal(s, latent)
        if not node.expanded:
            node.expanded = True
            for a, risk in enumerate(self._risks(s, latent)):
                if risk < p.step_risk:
                    node.children.append(SearchNode(node.actions + (a,), risk))
                    self._expanded += 1
                    if risk > self._max_risk:
                        self._max_risk = risk
                    if risk >= p.step_risk:
                        self._violations += 1
            if not node.children:
                node.infeasible = True
            return self._rollout(s, latent, depth, relaxed=node.infeasible)
        if not node.children:
            return self._rollout(s, latent, depth, relaxed=True)

        child = None
        for c in node.children:
            if c.visits == 0:
                child = c
                break
        if child is None:
            log_n = math.log(node.visits)
            best_score = -math.inf
            for c in node.children:
                score = c.value + self._explore * math.sqrt(log_n / c.visits)
                if score > best_score:
                    best_score = score
                    child = c
        reward, s2, latent2 = self._step(s, latent, child.actions[-1])
        ret = reward + p.gamma * self._simulate(child, s2, latent2, depth + 1)
        child.visits += 1
        child.value += (ret - child.value) / child.visits
        if self._record is not None:
            self._record.setdefault(child.actions, []).append(ret)
        return ret

    def _rollout(self, s: int, latent: np.ndarray, depth: int, relaxed: bool = False) -> float:
        p = self.params
        if self.model.terminal[s]:
            return 0.0
        if depth == p.horizon - 1:
            return self._terminal(s, latent)
        if relaxed:
            candidates = range(self._n_actions)
        else:
            candidates = [
                a for a, risk in enumerate(self._risks(s, latent))
                if risk < p.step_risk
            ] or range(self._n_actions)
        a = self._rollout_action(s, latent, list(candidates))
        reward, s2, latent2 = self._step(s, latent, a)
        return reward + p.gamma * self._rollout(s2, latent2, depth + 1)

    def _rollout_action(self, s: int, latent: np.ndarray, candidates: list[int]) -> int:
        if self.params.rollout == "uniform" or len(candidates) == 1:
            return candidates[int(self._rng.integers(len(candidates)))]
        # sample an intelligence level from the belief, then act like the
        # robot's one-level-up quantal policy restricted to feasible actions
        pk = (self.model.k_proj @ latent).tolist()
        u = self._rng.random() * sum(pk)
        acc = 0.0
        k_idx = len(pk) - 1
        for i, x in enumerate(pk):
            acc += x
            if u < acc:
                k_idx = i
                break
        row = self.model.pol_r_k[k_idx, s, candidates]
        total = float(row.sum())
        if total <= 0.0:
            return candidates[int(self._rng.integers(len(candidates)))]
        u = self._rng.random() * total
        acc = 0.0
        for j, x in enumerate(row.tolist()):
            acc += x
            if u < acc:
                return candidates[j]
        return candidates[-1]

    # -- public surface --------------------------------------------------------

    def simulate(self, node: SearchNode, b: Belief, depth: int) -> float:
        if not b.is_root:
            raise PlannerError("simulate expects a root-form belief")
        return self._simulate(node, int(b.state_ids[0]), b.latent_marginal(), depth)

    def rollout(self, b: Belief, depth: int) -> float:
        if not b.is_root:
            raise PlannerError("rollout expects a root-form belief")
        return self._rollout(int(b.state_ids[0]), b.latent_marginal(), depth)

    def plan(self, b: Belief, record_returns: bool = False):
        """Grow the tree until the budget expires, then commit to the root
        child with the best mean return. Never fails: with no risk-feasible
        root action it falls back to the least-risk action."""
        if not b.is_root:
            raise PlannerError("plan expects a root-form belief")
        p = self.params
        s = int(b.state_ids[0])
        latent = b.latent_marginal()
        root = SearchNode(())
        self._record = {} if record_returns else None
        self._max_risk = 0.0
        self._expanded = 0
        self._violations = 0

        t0 = time.perf_counter()
        sims = 0
        while True:
            self._simulate(root, s, latent, 0)
            root.visits += 1
            sims += 1
            if root.expanded and not root.children:
                break
            if p.max_sims is not None:
                if sims >= p.max_sims:
                    break
            elif (time.perf_counter() - t0) * 1000.0 >= p.budget_ms:
                break
        wall_ms = (time.perf_counter() - t0) * 1000.0

        diag = Diagnostics(
            sims=sims,
            eta=adaptive_eta(b, p.eta0),
            wall_ms=wall_ms,
            expanded_nodes=self._expanded,
            max_expanded_risk=self._max_risk,
            risk_violations=self._violations,
        )
        if self._record is not None:
            diag.returns = self._record
        for c in root.children:
            diag.root_children.append(
                {"seq": list(c.actions), "V": c.value, "N": c.visits,
                 "risk": c.expansion_risk}
            )
        if not root.children:
            diag.fallback = True
            action = infeasible_fallback(self.model, b)
            diag.chosen_risk = compute_risk(
                self.model, predict_belief(self.model, b, action))
        else:
            best = max(root.children, key=lambda c: c.value)
            action = best.actions[0]
            diag.chosen_risk = best.expansion_risk
        diag.chosen = action
        act = self.model.game.actions_r[action]
        diag.chosen_action = {"accel": act.accel, "lat": act.lat}
        self._record = None
        return action, diag


# ---------------------------------------------------------------------------
# Contract operations on the public Belief type


def compute_risk(model, pred: Belief) -> float:
    """Probability mass the predicted belief puts on physically unsafe states."""
    phys = pred.weights.sum(axis=0)
    return float(phys @ model.unsafe[pred.state_ids])


def adaptive_eta(b: Belief, eta0: float) -> float:
    """Information-reward scale proportional to current belief entropy,
    normalized so a uniform latent belief yields eta0 exactly."""
    n = b.n_theta
    if n <= 1:
        return 0.0
    return eta0 * b.entropy() / math.log(n)


def terminal_value(model, b: Belief) -> float:
    """Level-conditioned terminal estimate: the robot plays one level above
    the human's inferred intelligence level at full rationality."""
    pk = model.k_proj @ b.latent_marginal()
    ids, phys = b.physical_marginal()
    return float(pk @ (model.vterm_k[:, ids] @ phys))


def augmented_reward(model, b: Belief, a_r: int, eta0: float) -> float:
    """Belief-space task reward plus the adaptive information bonus. With
    eta0 = 0 this is exactly the passive-inference (BLP-1) reward."""
    from .belief import info_gain_from_predicted, reward_from_predicted

    pred = predict_belief(model, b, a_r)
    reward = reward_from_predicted(model, pred, a_r)
    if eta0 == 0.0:
        return reward
    eta = adaptive_eta(b, eta0)
    return reward + eta * info_gain_from_predicted(b.entropy(), pred)


def infeasible_fallback(model, b: Belief) -> int:
    """Least-risk action when no root action satisfies the chance constraint.

    Ties break toward the lowest acceleration (brake hard when every option
    is equally doomed), then fixed action order.
    """
    risks = [
        compute_risk(model, predict_belief(model, b, a))
        for a in range(model.n_actions_r)
    ]
    best = min(risks)
    candidates = [a for a, r in enumerate(risks) if r == best]
    candidates.sort(key=lambda a: (model.game.actions_r[a].accel, a))
    return candidates[0]
