"""Comparison policies: OPT (full-knowledge value iteration), CP (best
constant MCW), SP (fixed 32), FI (reactive fairness-index rule).

OPT and CP work off a reward table E[u | background state, action] estimated by
simulation; the random-forest baseline lives in :mod:`cw_arena.forest`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .env import ActionSpace, EpisodeConfig, utility
from .errors import InvalidConfiguration, InvalidParameter
from .mac import MacParams, Observation, run_interval
from .seeding import stream


@dataclass
class RewardTable:
    """``mean[s, a]`` over the background process's tabular states."""

    mean: np.ndarray
    stderr: np.ndarray
    replications: int
    state_keys: list

    def row(self, key):
        return self.state_keys.index(key)


def estimate_reward_table(cfg: EpisodeConfig, mac: MacParams, replications=500, seed=0):
    """Average utility of fresh intervals for every (background state, action).

    States sharing an MCW (zigzag directions) share one simulated estimate.
    """
    if replications < 1:
        raise InvalidParameter("replications must be >= 1")
    states = cfg.process.build().states()
    space = cfg.action_space
    cache = {}
    mean = np.zeros((len(states), len(space)))
    se = np.zeros_like(mean)
    for i, st in enumerate(states):
        if st.mcw not in cache:
            m_row, s_row = [], []
            for a, w0 in enumerate(space.mcw_values):
                rng = stream(seed, "table", st.mcw, w0)
                u = np.empty(replications)
                for r in range(replications):
                    obs, _, _ = run_interval([w0] + [st.mcw] * (cfg.n_nodes - 1), mac, None, rng)
                    u[r] = utility(obs, cfg.n_nodes)
                m_row.append(u.mean())
                s_row.append(u.std(ddof=1) / math.sqrt(replications) if replications > 1 else 0.0)
            cache[st.mcw] = (m_row, s_row)
        mean[i], se[i] = cache[st.mcw]
    return RewardTable(mean, se, replications, [s.key() for s in states])


@dataclass
class TabularPolicy:
    actions: np.ndarray
    q: np.ndarray
    state_keys: list
    residuals: list

    def act(self, key):
        try:
            return int(self.actions[self.state_keys.index(key)])
        except ValueError:
            raise InvalidParameter(f"unknown background state {key!r}") from None


def bellman_backup(q, rewards, P, discount):
    """Q(s,a) <- sum_s' P(s'|s) [R(s',a) + discount * max_a' Q(s',a')].

    The action is committed before the background transition realizes.
    """
    v = q.max(axis=1)
    return P @ (rewards + discount * v[:, None])


def value_iteration(rewards, P, discount, tol=1e-10, max_sweeps=100_000, state_keys=None):
    rewards = np.asarray(rewards, dtype=float)
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] != rewards.shape[0]:
        raise InvalidParameter("transition matrix shape mismatch")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        raise InvalidParameter("transition matrix rows must be probability vectors")
    if not 0.0 < discount < 1.0:
        raise InvalidParameter("discount must lie in (0, 1)")
    q = np.zeros_like(rewards)
    residuals = []
    for _ in range(max_sweeps):
        new = bellman_backup(q, rewards, P, discount)
        res = float(np.max(np.abs(new - q)))
        residuals.append(res)
        q = new
        if res < tol:
            break
    keys = state_keys if state_keys is not None else list(range(len(q)))
    return TabularPolicy(np.argmax(q, axis=1), q, keys, residuals)


def opt_policy(table: RewardTable, cfg: EpisodeConfig, tol=1e-10):
    P = cfg.process.build().transition_matrix()
    return value_iteration(table.mean, P, cfg.discount, tol, state_keys=table.state_keys)


def policy_value(actions, rewards, P, discount):
    """Exact discounted value of a stationary state-feedback policy."""
    n = len(actions)
    r = np.array([P[s] @ rewards[:, actions[s]] for s in range(n)])
    return np.linalg.solve(np.eye(n) - discount * P, r)


def cp_search(table: RewardTable, cfg: EpisodeConfig, episodes=200, seed=0):
    """Best constant action by Monte Carlo over background trajectories.

    Each episode starts from a uniformly drawn background state and scores
    the expected utility of every constant action along the same trajectory.
    Returns ``(action_index, mean_utility_per_action)``.
    """
    scores = np.zeros(len(cfg.action_space))
    for ep in range(episodes):
        rng = stream(seed, ep, "cp")
        proc = cfg.process.build().reset(rng)
        for _ in range(cfg.steps_per_episode):
            proc = proc.step(rng)
            scores += table.mean[table.row(proc.key())]
    scores /= episodes * cfg.steps_per_episode
    # argmax picks the first maximum: ties go to the smallest MCW
    return int(np.argmax(scores)), scores


def sp_action(space: ActionSpace, mcw=32):
    if mcw not in space.mcw_values:
        raise InvalidConfiguration(f"standard MCW {mcw} is not in the action space {space.mcw_values}")
    return space.index(mcw)


def fairness_index(obs: Observation, n_nodes):
    """Own airtime relative to the average airtime of one other node."""
    if obs.b == 0:
        return math.inf if obs.f > 0 else 1.0
    return obs.f * (n_nodes - 1) / obs.b


def fi_act(mcw, obs: Observation, n_nodes, space: ActionSpace, threshold=1.5):
    """One threshold update: take more than C times the fair share -> next
    larger MCW; less than 1/C of it -> next smaller; otherwise hold."""
    if threshold <= 1:
        raise InvalidParameter("threshold must exceed 1")
    vals = space.mcw_values
    # an MCW outside the ladder snaps to its nearest rung first
    i = int(np.argmin([abs(math.log2(v / mcw)) for v in vals]))
    idx = fairness_index(obs, n_nodes)
    if idx > threshold:
        i = min(i + 1, len(vals) - 1)
    elif idx < 1.0 / threshold:
        i = max(i - 1, 0)
    return vals[i]


TABLE_FORMAT = "cw-arena/reward-table"


def table_to_json(table: RewardTable):
    return json.dumps({
        "format": TABLE_FORMAT,
        "version": 1,
        "replications": table.replications,
        "state_keys": [list(k) if isinstance(k, tuple) else k for k in table.state_keys],
        "mean": table.mean.tolist(),
        "stderr": table.stderr.tolist(),
    })


def table_from_json(text):
    d = json.loads(text)
    if d.get("format") != TABLE_FORMAT or d.get("version") != 1:
        raise InvalidParameter("not a version-1 reward table")
    keys = [tuple(k) if isinstance(k, list) else k for k in d["state_keys"]]
    return RewardTable(np.array(d["mean"]), np.array(d["stderr"]), d["replications"], keys)
