"""Rainbow-style distributional deep-Q agent on top of :mod:`cw_arena.nn`.

The network is a dense ReLU trunk feeding a value stream and an advantage
stream (noisy linear heads). Each of the six Rainbow components can be turned
off independently; with all of them off and a single output per action the
agent is a plain DQN trained on the squared Bellman error.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .env import ContentionEnv, EpisodeConfig
from .errors import InvalidParameter, NumericalFailure
from .mac import MacParams
from .replay import PrioritizedBuffer, Transition
from .seeding import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentConfig:
    feature_dim: int
    n_actions: int
    hidden: tuple = (32, 32, 32, 32)
    atoms: int = 51
    v_min: float = 0.0
    v_max: float = 10.0
    n_step: int = 3
    per_alpha: float = 0.5
    per_beta_start: float = 0.4
    buffer_capacity: int = 10_000
    batch_size: int = 32
    target_sync_every: int = 500
    warmup_transitions: int = 1000
    discount: float = 0.9
    episodes: int = 5000
    lr: float = 1e-4
    adam_eps: float = 1.5e-4
    # only used when noisy nets are off
    epsilon: float = 0.0
    double: bool = True
    prioritized: bool = True
    dueling: bool = True
    multistep: bool = True
    distributional: bool = True
    noisy: bool = True

    def __post_init__(self):
        if self.distributional and not self.v_min < self.v_max:
            raise InvalidParameter("v_min must be < v_max")
        if self.distributional and self.atoms < 2:
            raise InvalidParameter("need at least two atoms")
        if self.n_step < 1:
            raise InvalidParameter("n_step must be >= 1")
        if self.batch_size > self.buffer_capacity:
            raise InvalidParameter("batch_size exceeds buffer capacity")

    @property
    def n_atoms(self):
        return self.atoms if self.distributional else 1

    @property
    def effective_n_step(self):
        return self.n_step if self.multistep else 1

    @property
    def effective_alpha(self):
        return self.per_alpha if self.prioritized else 0.0

    def support(self):
        if not self.distributional:
            return np.zeros(1)
        return np.linspace(self.v_min, self.v_max, self.atoms)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class RainbowNet:
    """Layer layout: trunk, then value stream, then advantage stream
    (advantage only when dueling is off), all in one flat parameter list."""

    def __init__(self, cfg: AgentConfig):
        self.cfg = cfg
        head = "noisy" if cfg.noisy else "dense"
        dims = [cfg.feature_dim, *cfg.hidden]
        self.trunk = [nn.LayerSpec(a, b, "dense", "relu") for a, b in zip(dims, dims[1:])]
        width = dims[-1]
        k = cfg.n_atoms
        self.value = [nn.LayerSpec(width, k, head, "identity")] if cfg.dueling else []
        self.adv = [nn.LayerSpec(width, cfg.n_actions * k, head, "identity")]
        self.specs = self.trunk + self.value + self.adv
        self._cut = (len(self.trunk), len(self.trunk) + len(self.value))

    def init(self, rng):
        return nn.init_params(self.specs, rng)

    def noise(self, rng):
        return nn.sample_noise(self.specs, rng)

    def _split(self, seq):
        a, b = self._cut
        return seq[:a], seq[a:b], seq[b:]

    def logits(self, params, x, noise=None):
        """Per-action logits over atoms, shape (B, A, atoms), plus a cache."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.cfg.feature_dim:
            raise InvalidParameter(f"feature width {x.shape[1]} != {self.cfg.feature_dim}")
        noise = noise or [None] * len(self.specs)
        pt, pv, pa = self._split(params)
        nt, nv, na = self._split(noise)
        h, c_trunk = nn.forward(self.trunk, pt, x, nt)
        B, A, K = x.shape[0], self.cfg.n_actions, self.cfg.n_atoms
        adv, c_adv = nn.forward(self.adv, pa, h, na)
        adv = adv.reshape(B, A, K)
        if self.cfg.dueling:
            val, c_val = nn.forward(self.value, pv, h, nv)
            out = val[:, None, :] + adv - adv.mean(axis=1, keepdims=True)
        else:
            c_val = None
            out = adv
        return out, (c_trunk, c_val, c_adv)

    def backward(self, params, cache, d_logits):
        c_trunk, c_val, c_adv = cache
        pt, pv, pa = self._split(params)
        B, A, K = d_logits.shape
        if self.cfg.dueling:
            d_val = d_logits.sum(axis=1)
            d_adv = d_logits - d_logits.mean(axis=1, keepdims=True)
            g_val, dh_v = nn.backward(self.value, pv, c_val, d_val, need_input_grad=True)
        else:
            d_adv = d_logits
            g_val, dh_v = [], 0.0
        g_adv, dh_a = nn.backward(self.adv, pa, c_adv, d_adv.reshape(B, A * K), need_input_grad=True)
        g_trunk = nn.backward(self.trunk, pt, c_trunk, dh_v + dh_a)
        return g_trunk + g_val + g_adv


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def q_distributions(net: RainbowNet, params, features, noise=None):
    """(B, A, atoms) probabilities; in scalar mode the raw (B, A, 1) Q values."""
    z, _ = net.logits(params, features, noise)
    return softmax(z) if net.cfg.distributional else z


def q_values(dist, support):
    if dist.shape[-1] == 1:
        return dist[..., 0]
    return dist @ support


def act_greedy(net: RainbowNet, params, features, noise=None):
    q = q_values(q_distributions(net, params, features, noise), net.cfg.support())
    # np.argmax returns the first maximum -> ties go to the smallest index
    return int(np.argmax(q[0]))


def n_step_accumulate(rewards, discount, terminal=False):
    if len(rewards) == 0:
        raise InvalidParameter("empty reward window")
    r = 0.0
    for t, x in enumerate(rewards):
        r += discount**t * x
    return r, 0.0 if terminal else discount ** len(rewards)


def project_target(target_dist, r_n, gamma, support):
    """Categorical projection of r_n + gamma·z onto ``support`` (batched over
    the leading axis)."""
    p = np.atleast_2d(np.asarray(target_dist, dtype=float))
    r_n = np.atleast_1d(np.asarray(r_n, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(r_n)) and np.all(np.isfinite(gamma))):
        raise NumericalFailure("non-finite projection input")
    v_min, v_max = support[0], support[-1]
    K = support.size
    dz = (v_max - v_min) / (K - 1)
    tz = np.clip(r_n[:, None] + gamma[:, None] * support[None, :], v_min, v_max)
    pos = (tz - v_min) / dz
    lo = np.floor(pos).astype(np.int64)
    hi = np.ceil(pos).astype(np.int64)
    lo = np.clip(lo, 0, K - 1)
    hi = np.clip(hi, 0, K - 1)
    w_hi = pos - lo
    w_lo = 1.0 - w_hi
    out = np.zeros_like(p)
    rows = np.repeat(np.arange(p.shape[0]), K)
    np.add.at(out, (rows, lo.ravel()), (p * w_lo).ravel())
    np.add.at(out, (rows, hi.ravel()), (p * w_hi).ravel())
    return out


def double_dqn_target(net: RainbowNet, online, target, s_next, r_n, gamma, noise_online=None, noise_target=None):
    """Bootstrapped target per sample: a* chosen by ``online`` (by ``target``
    when double-DQN is off), evaluated by ``target``. Distributional mode
    returns projected distributions (B, atoms); scalar mode returns (B,)."""
    s_next = np.atleast_2d(s_next)
    d_sel = q_distributions(net, online, s_next, noise_online) if net.cfg.double else None
    return _bootstrap(net, target, s_next, r_n, gamma, d_sel, noise_target)


def _bootstrap(net, target, s_next, r_n, gamma, d_sel, noise_target):
    cfg = net.cfg
    support = cfg.support()
    d_target = q_distributions(net, target, s_next, noise_target)
    if d_sel is None:
        d_sel = d_target
    a_star = np.argmax(q_values(d_sel, support), axis=1)
    chosen = d_target[np.arange(len(a_star)), a_star]
    if not cfg.distributional:
        return np.asarray(r_n) + np.asarray(gamma) * chosen[:, 0]
    return project_target(chosen, r_n, gamma, support)


def loss_and_gradients(net: RainbowNet, params, states, actions, targets, weights, noise=None):
    """Weighted mean loss over the batch.

    Distributional: per-sample cross-entropy -sum m log p(s, a).
    Scalar: squared error (Q(s, a) - y)^2.
    Returns ``(loss, grads, per_sample_signal)``; the signal feeds replay
    priorities (cross-entropy, or |TD error| in scalar mode).
    """
    z, cache = net.logits(params, states, noise)
    return _loss_from_logits(net, params, z, cache, len(z), actions, targets, weights)


def _loss_from_logits(net, params, z, cache, B, actions, targets, weights):
    # rows >= B (if any) ride along in the forward pass but get no gradient
    rows = np.arange(B)
    actions = np.asarray(actions)
    weights = np.asarray(weights, dtype=float)
    d = np.zeros_like(z)
    if net.cfg.distributional:
        za = z[rows, actions]
        logp = za - za.max(axis=-1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
        per = -(targets * logp).sum(axis=1)
        d[rows, actions] = (weights / B)[:, None] * (np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets)
        signal = per
    else:
        q = z[rows, actions, 0]
        err = q - targets
        per = err**2
        d[rows, actions, 0] = 2.0 * weights * err / B
        signal = np.abs(err)
    if not np.all(np.isfinite(per)):
        raise NumericalFailure("non-finite loss")
    loss = float(np.mean(weights * per))
    return loss, net.backward(params, cache, d), signal


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "mean_utility", "loss", "beta"])
            for r in self.rows:
                w.writerow([r["episode"], repr(r["mean_utility"]), repr(r["loss"]), repr(r["beta"])])


class RainbowAgent:
    def __init__(self, cfg: AgentConfig, seed=0, params=None):
        self.cfg = cfg
        self.net = RainbowNet(cfg)
        self.rng = stream(seed, "agent")
        self.online = nn.pack(params if params is not None else self.net.init(self.rng))
        self.target = nn.copy_params(self.online)
        self.opt = nn.AdamState(lr=cfg.lr, eps=cfg.adam_eps)
        self.buffer = PrioritizedBuffer(cfg.buffer_capacity, cfg.effective_alpha)
        self.grad_steps = 0

    # acting

    def act(self, features, explore=True):
        cfg = self.cfg
        if not explore:
            return act_greedy(self.net, self.online, features)
        if not cfg.noisy and cfg.epsilon > 0 and self.rng.random() < cfg.epsilon:
            return int(self.rng.integers(cfg.n_actions))
        return act_greedy(self.net, self.online, features, self.net.noise(self.rng))

    def q(self, features):
        return q_values(q_distributions(self.net, self.online, features), self.cfg.support())[0]

    # learning

    def learn(self, beta):
        cfg = self.cfg
        batch, idx, w = self.buffer.sample(cfg.batch_size, beta, self.rng)
        if not cfg.prioritized:
            w = np.ones_like(w)
        s = np.stack([t.s for t in batch])
        a = np.array([t.a for t in batch])
        r = np.array([t.r_n for t in batch])
        g = np.array([t.gamma_n for t in batch])
        s2 = np.stack([t.s_next for t in batch])
        # one online pass over [s; s'] (shared noise) serves both the loss and
        # the double-DQN action selection
        B = len(batch)
        z, cache = self.net.logits(self.online, np.vstack([s, s2]), self.net.noise(self.rng))
        d_sel = None
        if cfg.double:
            d_sel = softmax(z[B:]) if cfg.distributional else z[B:]
        targets = _bootstrap(self.net, self.target, s2, r, g, d_sel, self.net.noise(self.rng))
        loss, grads, signal = _loss_from_logits(self.net, self.online, z, cache, B, a, targets, w)
        nn.adam_step(self.online, grads, self.opt)
        self.buffer.update_priorities(idx, signal)
        self.grad_steps += 1
        if self.grad_steps % cfg.target_sync_every == 0:
            self.target = nn.copy_params(self.online)
        return loss


def train(env_cfg: EpisodeConfig, mac: MacParams, agent_cfg: AgentConfig, seed=0, progress_every=0):
    """Train on fresh episodes; returns ``(agent, TrainingLog)``.

    Episode ends are time limits, not terminal states: pending n-step windows
    are flushed with shorter returns that still bootstrap from the last state.
    """
    env = ContentionEnv(env_cfg, mac)
    agent = RainbowAgent(agent_cfg, seed)
    n = agent_cfg.effective_n_step
    disc = agent_cfg.discount
    total_steps = agent_cfg.episodes * env_cfg.steps_per_episode
    beta0 = agent_cfg.per_beta_start
    log_rows = TrainingLog()
    step = 0
    t0 = time.time()
    for ep in range(agent_cfg.episodes):
        env.reset(seed, ep)
        s = env.features
        window = deque()
        rewards, losses = [], []
        beta = beta0
        while not env.done:
            a = agent.act(s)
            _, r, _ = env.step(a)
            s2 = env.features
            rewards.append(r)
            window.append((s, a, r))
            if len(window) == n:
                r_n, g_n = n_step_accumulate([x[2] for x in window], disc)
                agent.buffer.push(Transition(window[0][0], window[0][1], r_n, g_n, s2))
                window.popleft()
            s = s2
            step += 1
            beta = min(1.0, beta0 + (1.0 - beta0) * step / total_steps)
            if len(agent.buffer) >= max(agent_cfg.warmup_transitions, agent_cfg.batch_size):
                losses.append(agent.learn(beta))
        while window:
            r_n, g_n = n_step_accumulate([x[2] for x in window], disc)
            agent.buffer.push(Transition(window[0][0], window[0][1], r_n, g_n, s))
            window.popleft()
        row = {
            "episode": ep,
            "mean_utility": float(np.mean(rewards)),
            "loss": float(np.mean(losses)) if losses else math.nan,
            "beta": beta,
        }
        log_rows.rows.append(row)
        if progress_every and (ep + 1) % progress_every == 0:
            recent = np.mean([x["mean_utility"] for x in log_rows.rows[-progress_every:]])
            log.info("episode %d  utility %.4f  loss %.4f  (%.0fs)", ep + 1, recent, row["loss"], time.time() - t0)
    return agent, log_rows
