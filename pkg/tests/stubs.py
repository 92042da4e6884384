"""Hand-built duck-typed models for exact-value belief and planner tests."""
from __future__ import annotations

import numpy as np


class StubAction:
    def __init__(self, accel, lat=0.0):
        self.accel = accel
        self.lat = lat


class StubGame:
    def __init__(self, actions_r):
        self.actions_r = actions_r


class StubModel:
    """Minimal surface the belief/planner operations consume.

    States are plain integers. ``succ[a_r][s]`` lists the successor of each
    human action; ``pol[theta][s]`` the human action probabilities.
    """

    def __init__(self, succ, pol, unsafe=None, reward_state=None, comfort_r=None,
                 vterm_k=None, k_proj=None, robot_actions=None, gamma=0.95):
        succ = np.asarray(succ, dtype=np.int64)               # [A_R, N, A_H]
        pol = np.asarray(pol, dtype=float)                    # [n_theta, N, A_H]
        n = max(succ.shape[1], int(succ.max()) + 1)
        if succ.shape[1] < n:
            # pad unreferenced tail states with self-loops / uniform policies
            pad = n - succ.shape[1]
            loops = np.arange(succ.shape[1], n)[None, :, None]
            succ = np.concatenate(
                [succ, np.broadcast_to(loops, (succ.shape[0], pad, succ.shape[2])).copy()],
                axis=1)
            pol = np.concatenate(
                [pol, np.full((pol.shape[0], pad, pol.shape[2]), 1.0 / pol.shape[2])],
                axis=1)
        self.succ = succ
        self.pol = pol
        self.n_actions_r = self.succ.shape[0]
        self.n_actions_h = self.succ.shape[2]
        self.n_theta = self.pol.shape[0]
        self.unsafe = (np.zeros(n, dtype=bool) if unsafe is None
                       else np.asarray(unsafe, dtype=bool))
        self.terminal = np.zeros(n, dtype=bool)
        self.reward_state = (np.zeros(n) if reward_state is None
                             else np.asarray(reward_state, dtype=float))
        self.comfort_r = (np.zeros(self.n_actions_r) if comfort_r is None
                          else np.asarray(comfort_r, dtype=float))
        if vterm_k is None:
            vterm_k = np.zeros((1, n))
        self.vterm_k = np.asarray(vterm_k, dtype=float)       # [n_k, N]
        self.vterm_sk = np.ascontiguousarray(self.vterm_k.T)
        if k_proj is None:
            k_proj = np.ones((self.vterm_k.shape[0], self.n_theta)) / 1.0
        self.k_proj = np.asarray(k_proj, dtype=float)
        self.pol_r_k = np.full(
            (self.vterm_k.shape[0], n, self.n_actions_r), 1.0 / self.n_actions_r
        )
        self.gamma = gamma
        if robot_actions is None:
            robot_actions = [StubAction(float(i)) for i in range(self.n_actions_r)]
        self.game = StubGame(robot_actions)
        # risk_sa[s, a_r, theta] = P(unsafe successor | s, a_r, theta)
        unsafe_f = self.unsafe.astype(float)
        risk = np.empty((n, self.n_actions_r, self.n_theta))
        for a in range(self.n_actions_r):
            u = unsafe_f[self.succ[a]]                        # [N, A_H]
            risk[:, a, :] = np.einsum("tna,na->nt", self.pol, u)
        self.risk_sa = np.ascontiguousarray(risk)

    def human_probs(self, s):
        return self.pol[:, s, :]

    def successors(self, s, a_r):
        return self.succ[a_r, s]

    def prior_belief(self, s):
        from mergeplan.belief import Belief

        return Belief.at_state(s, np.full(self.n_theta, 1.0 / self.n_theta))


def two_type_chain():
    """The 2-latent-type example used across the belief specs: from state 0,
    the robot's only action leads to state 1 (human action 0) or state 2
    (human action 1); type A picks action 0 with 0.8, type B with 0.2."""
    succ = [[[1, 2]]]                      # A_R=1, N... states 0,1,2 need rows
    # pad successor/policy tables to 3 states (rows 1, 2 are absorbing)
    succ = [[[1, 2], [1, 1], [2, 2]]]
    pol = [
        [[0.8, 0.2], [1.0, 0.0], [1.0, 0.0]],   # type A
        [[0.2, 0.8], [1.0, 0.0], [1.0, 0.0]],   # type B
    ]
    return StubModel(succ, pol)
