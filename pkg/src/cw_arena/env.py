"""Episode environment: node 0 picks its MCW, the other N-1 nodes follow a
hidden background process, and the reward is the fairness utility of the
realized interval."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidParameter
from .mac import IntervalAccounting, MacParams, Observation, fresh_nodes, run_interval
from .seeding import episode_rng, interval_rng


def utility(obs: Observation, n_nodes: int) -> float:
    if n_nodes < 2:
        raise InvalidParameter(f"utility needs n_nodes >= 2, got {n_nodes}")
    total = obs.f + obs.b
    share = obs.f / total if total > 0 else 0.0
    return 1.0 - abs(share - 1.0 / n_nodes)


@dataclass(frozen=True)
class ActionSpace:
    mcw_values: tuple

    def __post_init__(self):
        vals = tuple(int(v) for v in self.mcw_values)
        object.__setattr__(self, "mcw_values", vals)
        if not vals:
            raise InvalidParameter("empty action space")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidParameter(f"action space must be strictly increasing: {vals}")
        if vals[0] < 1:
            raise InvalidParameter("MCW values must be positive")

    def __len__(self):
        return len(self.mcw_values)

    def __getitem__(self, i):
        return self.mcw_values[i]

    def index(self, mcw):
        return self.mcw_values.index(int(mcw))

    def check(self, params: MacParams):
        if self.mcw_values[-1] > params.cw_max:
            raise InvalidParameter(f"MCW {self.mcw_values[-1]} exceeds cw_max {params.cw_max}")


# Background processes. Both expose the tabular view (states(), index(),
# transition_matrix()) the OPT baseline needs; the agent never sees them.


@dataclass(frozen=True)
class TwoStateMarkov:
    p_switch: float
    low_mcw: int = 32
    high_mcw: int = 128
    current: int = 1

    @property
    def mcw(self):
        return self.low_mcw if self.current == 1 else self.high_mcw

    def step(self, rng):
        if rng.random() < self.p_switch:
            return replace(self, current=3 - self.current)
        return self

    def reset(self, rng):
        return replace(self, current=int(rng.integers(1, 3)))

    def states(self):
        return [replace(self, current=1), replace(self, current=2)]

    def key(self):
        return self.current

    def transition_matrix(self):
        p = self.p_switch
        return np.array([[1 - p, p], [p, 1 - p]])


UP, DOWN = 1, -1


@dataclass(frozen=True)
class Zigzag:
    """Five MCW levels 32·2^(j-1) traversed up then down; one step per
    advance, which fires with probability ``p_advance``."""

    p_advance: float
    levels: int = 5
    base_mcw: int = 32
    level: int = 1
    direction: int = UP

    @property
    def mcw(self):
        return self.base_mcw << (self.level - 1)

    def step(self, rng):
        if rng.random() >= self.p_advance:
            return self
        d = self.direction
        if not 1 <= self.level + d <= self.levels:
            d = -d
        level = self.level + d
        if level == self.levels:
            d = DOWN
        elif level == 1:
            d = UP
        return replace(self, level=level, direction=d)

    def reset(self, rng):
        level = int(rng.integers(1, self.levels + 1))
        d = UP if rng.random() < 0.5 else DOWN
        if level == 1:
            d = UP
        elif level == self.levels:
            d = DOWN
        return replace(self, level=level, direction=d)

    def states(self):
        # cycle order: advancing moves one position along this list
        up = [replace(self, level=j, direction=UP) for j in range(1, self.levels)]
        down = [replace(self, level=j, direction=DOWN) for j in range(self.levels, 1, -1)]
        return up + down

    def key(self):
        return (self.level, self.direction)

    def transition_matrix(self):
        n = 2 * (self.levels - 1)
        P = np.eye(n) * (1 - self.p_advance)
        for i in range(n):
            P[i, (i + 1) % n] += self.p_advance
        return P


def background_step(process, rng):
    return process.step(rng)


@dataclass(frozen=True)
class ProcessSpec:
    kind: str  # "markov2" | "zigzag"
    p: float
    # markov2 only: MCWs of the two states
    low_mcw: int = 32
    high_mcw: int = 128

    def __post_init__(self):
        if self.kind not in ("markov2", "zigzag"):
            raise InvalidParameter(f"unknown background process {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise InvalidParameter(f"probability out of range: {self.p}")

    def build(self):
        if self.kind == "markov2":
            return TwoStateMarkov(self.p, self.low_mcw, self.high_mcw)
        return Zigzag(self.p)


@dataclass(frozen=True)
class EpisodeConfig:
    n_nodes: int = 10
    steps_per_episode: int = 50
    memory: int = 1
    action_space: ActionSpace = field(default_factory=lambda: ActionSpace((32, 48, 64, 96, 128)))
    process: ProcessSpec = field(default_factory=lambda: ProcessSpec("markov2", 1.0))
    discount: float = 0.9

    def __post_init__(self):
        if self.n_nodes < 2:
            raise InvalidParameter("n_nodes must be >= 2")
        if self.steps_per_episode < 1:
            raise InvalidParameter("steps_per_episode must be >= 1")
        if self.memory < 1:
            raise InvalidParameter("memory must be >= 1")
        if not 0.0 < self.discount < 1.0:
            raise InvalidParameter("discount must lie in (0, 1)")


class AgentState:
    """Ring buffer of the last M (Observation, own MCW) pairs, oldest first."""

    def __init__(self, memory, first_entry):
        self.memory = memory
        self.history = deque([first_entry] * memory, maxlen=memory)

    def push(self, obs, mcw):
        self.history.append((obs, int(mcw)))

    @property
    def own_mcw(self):
        return self.history[-1][1]

    def copy(self):
        out = AgentState.__new__(AgentState)
        out.memory = self.memory
        out.history = deque(self.history, maxlen=self.memory)
        return out


def encode_features(state: AgentState, space: ActionSpace) -> np.ndarray:
    lo, hi = space.mcw_values[0], space.mcw_values[-1]
    span = math.log2(hi / lo) if hi > lo else 1.0
    out = np.empty(3 * state.memory)
    for k, (obs, mcw) in enumerate(state.history):
        out[3 * k] = obs.f
        out[3 * k + 1] = obs.b
        out[3 * k + 2] = math.log2(mcw / lo) / span
    return out


class ContentionEnv:
    """One intelligent node among ``n_nodes`` on a shared channel.

    Random streams are keyed by (master seed, episode, purpose, step), so two
    policies run on the same episode see the same background trajectory and,
    when they pick the same MCWs, the same channel draws.
    """

    def __init__(self, cfg: EpisodeConfig, mac: MacParams):
        cfg.action_space.check(mac)
        self.cfg = cfg
        self.mac = mac
        self.space = cfg.action_space
        self.hidden = None
        self.state = None
        self.nodes = None
        self.t = 0
        self.hidden_trajectory = []

    def reset(self, master_seed, episode):
        self._master, self._episode = master_seed, episode
        self._bg_rng = episode_rng(master_seed, episode, "background")
        init_rng = episode_rng(master_seed, episode, "init")
        self.hidden = self.cfg.process.build().reset(self._bg_rng)
        self.first_action = int(init_rng.integers(len(self.space)))
        self.t = 0
        self.hidden_trajectory = [self.hidden.key()]
        mcw0 = self.space[self.first_action]
        self.nodes = fresh_nodes(self._mcws(mcw0))
        obs, _ = self._interval(mcw0, self.mac)
        self.state = AgentState(self.cfg.memory, (obs, mcw0))
        return self.state

    @property
    def features(self):
        return encode_features(self.state, self.space)

    @property
    def done(self):
        return self.t >= self.cfg.steps_per_episode

    def _mcws(self, mcw0):
        return [mcw0] + [self.hidden.mcw] * (self.cfg.n_nodes - 1)

    def _interval(self, mcw0, params, sub=0):
        rng = interval_rng(self._master, self._episode, self.t, sub)
        obs, acc, self.nodes = run_interval(self._mcws(mcw0), params, self.nodes, rng)
        return obs, acc

    def _advance_background(self):
        self.hidden = self.hidden.step(self._bg_rng)
        self.t += 1
        self.hidden_trajectory.append(self.hidden.key())

    def step(self, action: int):
        if not 0 <= action < len(self.space):
            raise InvalidParameter(f"action index {action} outside [0, {len(self.space)})")
        return self.step_mcw(self.space[action])

    def step_mcw(self, mcw0: int):
        self._advance_background()
        obs, _ = self._interval(mcw0, self.mac)
        reward = utility(obs, self.cfg.n_nodes)
        self.state.push(obs, mcw0)
        return self.state, reward, obs

    def step_adaptive(self, update, n_sub=3):
        """Interval split into ``n_sub`` equal parts; after each part
        ``update(mcw, sub_obs)`` returns node 0's MCW for what follows."""
        self._advance_background()
        sub_params = self.mac.with_interval(self.mac.interval_length / n_sub)
        mcw = self.state.own_mcw
        total = IntervalAccounting()
        for k in range(n_sub):
            obs, acc = self._interval(mcw, sub_params, sub=k + 1)
            total.t_success_self += acc.t_success_self
            total.t_success_others += acc.t_success_others
            total.elapsed += acc.elapsed
            mcw = update(mcw, obs)
        obs = Observation(total.t_success_self / total.elapsed, total.t_success_others / total.elapsed)
        reward = utility(obs, self.cfg.n_nodes)
        self.state.push(obs, mcw)
        return self.state, reward, obs
