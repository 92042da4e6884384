"""Belief tracking over augmented (physical state, latent driver type) space.

The robot observes the joint physical state exactly, so a belief in *root
form* has all physical mass on one grid state plus a probability vector over
latent types. Predicting one robot action forward spreads mass over the
successors each hypothesized human policy can reach (*predicted form*); a
subsequent observation collapses the physical part again via Bayes' rule.
Latent types are static, so their marginal is only reshaped by observations.

All operations are pure: beliefs are immutable values and every update
returns a new one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import HUMAN, ROBOT, JointState, MergeGame
from .qlk import LatentSpace, QlkSolution

MASS_TOL = 1e-9


class BeliefError(ValueError):
    pass


class ZeroLikelihoodError(BeliefError):
    """The observed state has zero probability under every hypothesis."""

    def __init__(self, belief, action, observation):
        super().__init__(
            f"observation {observation} has zero predicted probability after "
            f"action {action}"
        )
        self.belief = belief
        self.action = action
        self.observation = observation


def _entropy(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float).ravel()
    w = w[w > 0.0]
    return float(-(w * np.log(w)).sum()) if w.size else 0.0


@dataclass(frozen=True)
class Belief:
    """Sparse distribution over (state index, latent index) pairs.

    ``weights[theta, j]`` is the mass on (state_ids[j], theta). Root form has
    a single support state.
    """

    state_ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.state_ids, dtype=np.int64)
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[1] != ids.shape[0]:
            raise BeliefError(f"weights {w.shape} do not match support {ids.shape}")
        if np.any(w < -MASS_TOL):
            raise BeliefError("negative probability mass")
        if abs(w.sum() - 1.0) > 1e-6:
            raise BeliefError(f"belief mass {w.sum()} is not 1")
        ids.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "state_ids", ids)
        object.__setattr__(self, "weights", w)

    @classmethod
    def at_state(cls, state_id: int, latent: np.ndarray) -> "Belief":
        latent = np.asarray(latent, dtype=float)
        return cls(np.array([state_id], dtype=np.int64), latent[:, None].copy())

    @property
    def n_theta(self) -> int:
        return self.weights.shape[0]

    @property
    def is_root(self) -> bool:
        return self.state_ids.shape[0] == 1

    def latent_marginal(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def physical_marginal(self) -> tuple[np.ndarray, np.ndarray]:
        return self.state_ids, self.weights.sum(axis=0)

    def entropy(self) -> float:
        return _entropy(self.weights)

    def to_json(self, grid, space: LatentSpace) -> dict:
        if not self.is_root:
            raise BeliefError("only root-form beliefs serialize to the snapshot schema")
        s = grid.from_index(int(self.state_ids[0]))
        latent = self.latent_marginal()
        return {
            "state": {
                "x_r": s.x_r, "y_r": s.y_r, "x_h": s.x_h,
                "v_r": s.v_r, "v_h": s.v_h,
            },
            "latent": [
                {"k": t.k, "lambda": t.lam, "p": float(latent[i])}
                for i, t in enumerate(space.types)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict, grid, space: LatentSpace) -> "Belief":
        s = JointState(**doc["state"])
        probs = np.zeros(len(space))
        for entry in doc["latent"]:
            from .qlk import LatentState

            probs[space.index(LatentState(entry["k"], entry["lambda"]))] = entry["p"]
        return cls.at_state(grid.to_index(s), probs)


class CompiledModel:
    """Dense arrays binding solved tables to the grid for fast belief math.

    Exposes the duck-typed surface the belief and planner operations consume:
    per-state human action probabilities for every latent type, successor
    lookups, safety flags, the robot's planning reward, and the quantal
    level-(k+1) terminal-value tables.
    """

    def __init__(self, game: MergeGame, sol: QlkSolution, space: LatentSpace):
        from .config import config_hash

        if sol.cfg_hash != config_hash(game.cfg):
            from .qlk import TableMismatchError

            raise TableMismatchError(
                f"tables hash {sol.cfg_hash} does not match the game config"
            )
        self.game = game
        self.space = space
        self.solution = sol
        self.gamma = sol.gamma
        tables = game.tables()
        self.n_theta = len(space)
        self.n_actions_h = len(game.actions_h)
        self.n_actions_r = len(game.actions_r)
        # pol[theta, s] -> (A_H,) human action probabilities
        self.pol = np.ascontiguousarray(
            np.stack([sol.policy(HUMAN, t.k, t.lam) for t in space.types])
        )
        # succ[a_r, s] -> (A_H,) successor indices
        self.succ = np.ascontiguousarray(tables.succ.transpose(0, 2, 1))
        self.unsafe = tables.unsafe
        self.terminal = tables.terminal
        self.reward_state = tables.r_state_planner
        self.comfort_r = tables.comfort_r_planner
        self.k_proj = space.k_projection()
        self.vterm_k = np.ascontiguousarray(
            np.stack([sol.value(ROBOT, k + 1, 1.0) for k in space.k_values])
        )
        self.vterm_sk = np.ascontiguousarray(self.vterm_k.T)
        # robot quantal policies one level above each hypothesis (qlk rollouts)
        self.pol_r_k = np.ascontiguousarray(
            np.stack([sol.policy(ROBOT, k + 1, 1.0) for k in space.k_values])
        )
        # risk_sa[s, a_r, theta]: P(unsafe successor | s, a_r, theta); the
        # one-step chance-constraint check for any root-form belief is then a
        # single (A_R x n_theta) @ latent product.
        unsafe_f = tables.unsafe.astype(float)
        risk = np.empty((self.n_actions_r, self.n_theta, game.grid.n_states))
        for a in range(self.n_actions_r):
            u = unsafe_f[tables.succ[a]]  # [A_H, N]
            risk[a] = np.einsum("tsa,as->ts", self.pol, u)
        self.risk_sa = np.ascontiguousarray(risk.transpose(2, 0, 1))

    def human_probs(self, s_idx: int) -> np.ndarray:
        return self.pol[:, s_idx, :]

    def successors(self, s_idx: int, a_r: int) -> np.ndarray:
        return self.succ[a_r, s_idx]

    def prior_belief(self, s_idx: int) -> Belief:
        return Belief.at_state(s_idx, self.space.prior)


def _merge_columns(ids: np.ndarray, W: np.ndarray):
    """Sum weight columns that share a successor state; ids come out sorted."""
    uniq, inv = np.unique(ids, return_inverse=True)
    if uniq.shape[0] == ids.shape[0]:
        order = np.argsort(ids, kind="stable")
        return ids[order], W[:, order]
    merged = np.zeros((W.shape[0], uniq.shape[0]))
    for col, target in enumerate(inv):
        merged[:, target] += W[:, col]
    return uniq, merged


def predict_belief(model, b: Belief, a_r: int) -> Belief:
    """Push the belief through one robot action without observing: latents
    stay put, physical mass spreads over the successors weighted by each
    type's action probabilities."""
    if b.is_root:
        s = int(b.state_ids[0])
        ids = model.successors(s, a_r)
        W = b.weights[:, 0:1] * model.human_probs(s)
        return Belief(*_merge_columns(ids, W))
    acc: dict[int, np.ndarray] = {}
    for j, s in enumerate(b.state_ids):
        ids = model.successors(int(s), a_r)
        W = b.weights[:, j : j + 1] * model.human_probs(int(s))
        for col, sid in enumerate(ids):
            key = int(sid)
            if key in acc:
                acc[key] = acc[key] + W[:, col]
            else:
                acc[key] = W[:, col].copy()
    out_ids = np.array(sorted(acc), dtype=np.int64)
    out_w = np.stack([acc[int(i)] for i in out_ids], axis=1)
    return Belief(out_ids, out_w)


def transition_prob(model, s_idx: int, theta_idx: int, a_r: int,
                    s2_idx: int, theta2_idx: int) -> float:
    """Augmented-state transition probability: deterministic physical
    dynamics summed over human actions, identity on the latent type."""
    if theta2_idx != theta_idx:
        return 0.0
    ids = model.successors(s_idx, a_r)
    probs = model.human_probs(s_idx)[theta_idx]
    return float(probs[ids == s2_idx].sum())


def observation_dist(model, b: Belief, a_r: int) -> tuple[np.ndarray, np.ndarray]:
    pred = predict_belief(model, b, a_r)
    return pred.state_ids, pred.weights.sum(axis=0)


def observation_prob(model, b: Belief, a_r: int, o_idx: int) -> float:
    ids, probs = observation_dist(model, b, a_r)
    hit = probs[ids == o_idx]
    return float(hit[0]) if hit.size else 0.0


def posterior_from_predicted(pred: Belief, o_idx: int, *, prior=None, action=None) -> Belief:
    """Collapse a predicted belief onto an observed state (Bayes step)."""
    hit = np.flatnonzero(pred.state_ids == o_idx)
    if hit.size == 0:
        raise ZeroLikelihoodError(prior, action, o_idx)
    col = pred.weights[:, hit[0]]
    total = col.sum()
    if total <= 0.0:
        raise ZeroLikelihoodError(prior, action, o_idx)
    return Belief.at_state(int(o_idx), col / total)


def update_belief(model, b: Belief, a_r: int, o_idx: int) -> Belief:
    pred = predict_belief(model, b, a_r)
    return posterior_from_predicted(pred, o_idx, prior=b, action=a_r)


def belief_reward(model, b: Belief, a_r: int, weights=None) -> float:
    """Expected robot reward of the predicted next state, plus the comfort
    cost of the robot action itself."""
    pred = predict_belief(model, b, a_r)
    return reward_from_predicted(model, pred, a_r, weights)


def reward_from_predicted(model, pred: Belief, a_r: int, weights=None) -> float:
    phys = pred.weights.sum(axis=0)
    if weights is None:
        per_state = model.reward_state[pred.state_ids]
        comfort = model.comfort_r[a_r]
    else:
        game = model.game
        action = game.actions_r[a_r]
        w_eff = weights.effective()
        per_state = np.array(
            [game.reward(game.grid.from_index(int(i)), weights) for i in pred.state_ids]
        )
        comfort = w_eff[6] * (-abs(action.accel) / game.accel_scale) + w_eff[7] * (
            -abs(action.lat) / game.lat_scale
        )
    return float(phys @ per_state + comfort)


def entropy(b: Belief) -> float:
    """Shannon entropy (nats) over the full augmented support, 0 log 0 := 0."""
    return b.entropy()


def info_gain_from_predicted(prior_entropy: float, pred: Belief) -> float:
    obs_probs = pred.weights.sum(axis=0)
    expected_posterior = 0.0
    for j, q in enumerate(obs_probs):
        if q > 0.0:
            expected_posterior += q * _entropy(pred.weights[:, j] / q)
    return prior_entropy - expected_posterior


def info_gain(model, b: Belief, a_r: int) -> float:
    """Expected entropy reduction from acting and observing the outcome."""
    pred = predict_belief(model, b, a_r)
    return info_gain_from_predicted(b.entropy(), pred)
