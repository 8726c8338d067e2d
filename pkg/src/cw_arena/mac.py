"""Slotted, saturated binary-exponential-backoff channel.

Every node always has a packet queued. Time advances in idle slots and busy
periods; a node transmits when its backoff counter is 0. A lone transmitter
succeeds, two or more collide. Counters only move during idle slots.

The hot loop lives in a numba kernel. Each interval re-seeds the kernel's
generator from a 32-bit value drawn from the caller's ``numpy`` generator, so
results depend only on that generator's state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import InvalidParameter, NumericalFailure


def _airtime(n_bytes, rate):
    return n_bytes * 8.0 / rate


@dataclass(frozen=True)
class MacParams:
    """Timing constants of the channel model (802.11b-flavoured defaults)."""

    slot_time: float = 20e-6
    difs: float = 50e-6
    sifs: float = 10e-6
    phy_overhead: float = 192e-6
    data_rate: float = 1e6
    payload_bytes: int = 1400
    mac_overhead_bytes: int = 28
    ack_bytes: int = 14
    # None -> sifs + phy_overhead + ack airtime + slot_time
    ack_timeout: float | None = None
    cw_max: int = 1024
    interval_length: float = 20.0

    def __post_init__(self):
        if self.ack_timeout is None:
            object.__setattr__(
                self,
                "ack_timeout",
                self.sifs + self.phy_overhead + _airtime(self.ack_bytes, self.data_rate) + self.slot_time,
            )
        self.validate()

    def validate(self, mcws=None):
        for name in ("slot_time", "difs", "sifs", "phy_overhead", "ack_timeout", "interval_length", "data_rate"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvalidParameter(f"{name} must be positive and finite, got {v!r}")
        for name in ("payload_bytes", "mac_overhead_bytes", "ack_bytes"):
            if getattr(self, name) < 0:
                raise InvalidParameter(f"{name} must be non-negative")
        if self.cw_max < 1 or self.cw_max & (self.cw_max - 1):
            raise InvalidParameter(f"cw_max must be a power of two, got {self.cw_max}")
        if self.interval_length < success_duration(self):
            raise InvalidParameter("interval_length shorter than one successful transmission")
        if mcws is not None:
            for w in mcws:
                if w < 1 or w > self.cw_max:
                    raise InvalidParameter(f"mcw {w} outside [1, cw_max={self.cw_max}]")

    def with_interval(self, interval_length):
        return replace(self, interval_length=interval_length)


def success_duration(params: MacParams) -> float:
    data = _airtime(params.payload_bytes + params.mac_overhead_bytes, params.data_rate)
    ack = _airtime(params.ack_bytes, params.data_rate)
    return params.difs + params.phy_overhead + data + params.sifs + params.phy_overhead + ack


def collision_duration(params: MacParams) -> float:
    data = _airtime(params.payload_bytes + params.mac_overhead_bytes, params.data_rate)
    return params.difs + params.phy_overhead + data + params.ack_timeout


def current_cw(mcw: int, stage: int, cw_max: int) -> int:
    return min(mcw << stage, cw_max)


def sample_backoff(cw: int, rng: np.random.Generator) -> int:
    """Uniform draw from {0, ..., cw - 1}."""
    if cw < 1:
        raise InvalidParameter(f"contention window must be >= 1, got {cw}")
    return int(rng.integers(cw))


@dataclass
class NodeState:
    mcw: int
    backoff_stage: int = 0
    backoff_counter: int = 0

    def cw(self, cw_max: int) -> int:
        return current_cw(self.mcw, self.backoff_stage, cw_max)


@dataclass(frozen=True)
class Observation:
    f: float
    b: float

    def as_array(self):
        return np.array([self.f, self.b])


@dataclass
class IntervalAccounting:
    t_success_self: float = 0.0
    t_success_others: float = 0.0
    t_collision: float = 0.0
    t_idle: float = 0.0
    elapsed: float = 0.0
    n_success: int = 0
    n_collision: int = 0
    # per-node successful airtime; index 0 is the intelligent node
    t_success_per_node: np.ndarray = field(default_factory=lambda: np.zeros(0))


@numba.njit(cache=True)
def _kernel(mcw, stage, counter, redraw, cw_max, slot, t_s, t_c, horizon, seed, per_node):
    np.random.seed(seed)
    n = mcw.shape[0]
    for i in range(n):
        if redraw[i]:
            stage[i] = 0
            counter[i] = np.random.randint(0, mcw[i])
    t_idle = 0.0
    t_coll = 0.0
    elapsed = 0.0
    n_succ = 0
    n_coll = 0
    tx = np.empty(n, np.int64)
    while elapsed < horizon:
        m = counter.min()
        if m > 0:
            k = m
            remaining = int(math.ceil((horizon - elapsed) / slot))
            if remaining < k:
                k = remaining
            counter -= k
            t_idle += k * slot
            elapsed += k * slot
            if k < m:
                break
        n_tx = 0
        for i in range(n):
            if counter[i] == 0:
                tx[n_tx] = i
                n_tx += 1
        if n_tx == 1:
            i = tx[0]
            per_node[i] += t_s
            elapsed += t_s
            n_succ += 1
            stage[i] = 0
            counter[i] = np.random.randint(0, mcw[i])
        else:
            t_coll += t_c
            elapsed += t_c
            n_coll += 1
            for k in range(n_tx):
                i = tx[k]
                # stage stops growing once the window is capped
                if (mcw[i] << stage[i]) < cw_max:
                    stage[i] += 1
                cw = min(mcw[i] << stage[i], cw_max)
                counter[i] = np.random.randint(0, cw)
    return elapsed, t_idle, t_coll, n_succ, n_coll


def fresh_nodes(mcws) -> list[NodeState]:
    """Nodes that have not drawn a counter yet (redrawn on first interval)."""
    return [NodeState(int(w), 0, -1) for w in mcws]


def run_interval(mcws, params: MacParams, nodes: list[NodeState] | None, rng: np.random.Generator):
    """Simulate one observation interval.

    ``nodes`` carries backoff state across intervals. A node whose MCW differs
    from its stored one (or whose counter is negative, i.e. fresh) restarts at
    stage 0 with a new counter. Returns ``(Observation, IntervalAccounting,
    new_nodes)``; the input list is not mutated.
    """
    mcws = [int(w) for w in mcws]
    if len(mcws) == 0:
        raise InvalidParameter("need at least one node")
    params.validate(mcws)
    if nodes is None:
        nodes = fresh_nodes(mcws)
    if len(nodes) != len(mcws):
        raise InvalidParameter("nodes and mcws differ in length")

    n = len(mcws)
    mcw = np.array(mcws, dtype=np.int64)
    stage = np.array([s.backoff_stage for s in nodes], dtype=np.int64)
    counter = np.array([s.backoff_counter for s in nodes], dtype=np.int64)
    redraw = np.array([s.mcw != w or s.backoff_counter < 0 for s, w in zip(nodes, mcws)])
    per_node = np.zeros(n)
    seed = int(rng.integers(0, 2**32))
    elapsed, t_idle, t_coll, n_succ, n_coll = _kernel(
        mcw, stage, counter, redraw, params.cw_max, params.slot_time,
        success_duration(params), collision_duration(params),
        params.interval_length, seed, per_node,
    )
    acc = IntervalAccounting(
        t_success_self=float(per_node[0]),
        t_success_others=float(per_node[1:].sum()),
        t_collision=t_coll,
        t_idle=t_idle,
        elapsed=elapsed,
        n_success=int(n_succ),
        n_collision=int(n_coll),
        t_success_per_node=per_node,
    )
    obs = Observation(acc.t_success_self / elapsed, acc.t_success_others / elapsed)
    new_nodes = [NodeState(int(w), int(s), int(c)) for w, s, c in zip(mcw, stage, counter)]
    return obs, acc, new_nodes


def _attempt_probability(p, w, m):
    x = 1.0 - 2.0 * p
    num = 2.0 * x
    den = x * (w + 1.0) + p * w * (1.0 - (2.0 * p) ** m)
    out = np.empty_like(p)
    near = np.abs(x) < 1e-9
    # removable singularity at p = 1/2: tau -> 2 / (1 + W + p W m)
    out[near] = 2.0 / (1.0 + w[near] + p[near] * w[near] * m[near])
    out[~near] = num[~near] / den[~near]
    return out


def attempt_probabilities(mcws, cw_max: int, tol=1e-10, max_iter=100_000, damping=0.5):
    """Heterogeneous saturation fixed point for the per-node attempt probability."""
    w = np.asarray(mcws, dtype=float)
    if w.size == 0:
        raise InvalidParameter("need at least one node")
    m = np.log2(cw_max / w)
    tau = 2.0 / (w + 1.0)
    for _ in range(max_iter):
        others = np.array([np.prod(np.delete(1.0 - tau, i)) for i in range(w.size)])
        p = 1.0 - others
        new = _attempt_probability(p, w, m)
        if not np.all(np.isfinite(new)):
            raise NumericalFailure("attempt probability diverged")
        if np.max(np.abs(new - tau)) < tol:
            return new
        tau = damping * tau + (1.0 - damping) * new
    raise NumericalFailure(f"fixed point did not converge in {max_iter} iterations")


def analytic_share(mcws, params: MacParams) -> np.ndarray:
    """Expected fraction of time each node spends in successful transmissions."""
    tau = attempt_probabilities(mcws, params.cw_max)
    n = tau.size
    p_success = np.array([tau[i] * np.prod(np.delete(1.0 - tau, i)) for i in range(n)])
    p_idle = np.prod(1.0 - tau)
    p_coll = max(1.0 - p_idle - p_success.sum(), 0.0)
    t_s = success_duration(params)
    mean_slot = p_idle * params.slot_time + p_success.sum() * t_s + p_coll * collision_duration(params)
    return p_success * t_s / mean_slot
