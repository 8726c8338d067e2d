"""Scenario orchestration: fit/solve every requested method, evaluate them on
paired episodes and export CSV summaries.

Evaluation episodes use episode ids ``EVAL_OFFSET + e`` under the master seed,
so they never coincide with training episodes, and every method sees the same
background trajectory in episode ``e``.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import baselines as bl
from .config import ScenarioConfig
from .env import ContentionEnv
from .errors import InvalidParameter, InvalidState
from .forest import Forest, rf_generate_dataset, rf_predict, rf_train
from .rainbow import train
from .serialize import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

EVAL_OFFSET = 2**31
PER_EPISODE_COLUMNS = ["method", "episode", "mean_utility"]
SUMMARY_COLUMNS = ["method", "n", "mean", "median", "q1", "q3", "whisker_low", "whisker_high", "min", "max", "n_outliers"]
HISTOGRAM_COLUMNS = ["method", "bin_low", "bin_high", "count"]
HIST_WIDTH = 0.01


# ------------------------------------------------------------ statistics


def summarize(values):
    """Boxplot statistics; quartiles by linear interpolation, whiskers at the
    most extreme points within 1.5 IQR of the box."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise InvalidParameter("cannot summarize an empty sample")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    outliers = x[(x < q1 - 1.5 * iqr) | (x > q3 + 1.5 * iqr)]
    return {
        "n": int(x.size),
        "mean": float(x.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "iqr": float(iqr),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "min": float(x[0]),
        "max": float(x[-1]),
        "outliers": outliers.tolist(),
    }


def histogram(values, width=HIST_WIDTH):
    x = np.asarray(values, dtype=float)
    lo = np.floor(x.min() / width) * width
    n_bins = max(1, int(np.ceil(round((1.0 - lo) / width, 9))))
    counts, edges = np.histogram(x, bins=n_bins, range=(lo, lo + n_bins * width))
    return counts, edges


@dataclass
class RunMetrics:
    per_episode: dict = field(default_factory=dict)  # method -> array of episode means
    trajectories: dict = field(default_factory=dict)  # method -> list of hidden-state sequences
    extras: dict = field(default_factory=dict)

    def summary(self):
        return {m: summarize(v) for m, v in self.per_episode.items()}

    def means(self):
        return {m: float(np.mean(v)) for m, v in self.per_episode.items()}


# ------------------------------------------------------------ policies


class Policy:
    """Chooses node 0's MCW each step; ``run_episode`` drives the env."""

    adaptive = False

    def begin(self, env):
        pass

    def act(self, env):
        raise NotImplementedError


class RLPolicy(Policy):
    def __init__(self, agent):
        self.agent = agent

    def act(self, env):
        return self.agent.act(env.features, explore=False)


class TablePolicy(Policy):
    def __init__(self, tabular):
        self.tabular = tabular

    def act(self, env):
        return self.tabular.act(env.hidden.key())


class ConstantPolicy(Policy):
    def __init__(self, index):
        self.index = index

    def act(self, env):
        return self.index


class ForestPolicy(Policy):
    def __init__(self, forest):
        self.forest = forest

    def act(self, env):
        return rf_predict(self.forest, env.features)


class FairnessIndexPolicy(Policy):
    adaptive = True

    def __init__(self, threshold=1.5, updates=3):
        self.threshold = threshold
        self.updates = updates

    def update_fn(self, env):
        n, space, c = env.cfg.n_nodes, env.space, self.threshold
        return lambda mcw, obs: bl.fi_act(mcw, obs, n, space, c)


def run_episode(env, policy, master_seed, episode):
    env.reset(master_seed, episode)
    rewards = []
    while not env.done:
        if policy.adaptive:
            _, r, _ = env.step_adaptive(policy.update_fn(env), policy.updates)
        else:
            _, r, _ = env.step(policy.act(env))
        rewards.append(r)
    return float(np.mean(rewards)), list(env.hidden_trajectory)


def _eval_chunk(args):
    cfg, policy, seed, episodes = args
    env = ContentionEnv(cfg.env, cfg.mac)
    return [run_episode(env, policy, seed, EVAL_OFFSET + e) for e in episodes]


def evaluate(cfg: ScenarioConfig, policy, episodes=None, workers=1):
    """Per-episode mean utilities and hidden trajectories, ordered by episode."""
    n = cfg.eval_episodes if episodes is None else episodes
    ids = list(range(n))
    if workers <= 1:
        results = _eval_chunk((cfg, policy, cfg.seed, ids))
    else:
        chunks = [ids[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_eval_chunk, [(cfg, policy, cfg.seed, c) for c in chunks]))
        by_id = {}
        for c, part in zip(chunks, parts):
            by_id.update(zip(c, part))
        results = [by_id[i] for i in ids]
    return np.array([r[0] for r in results]), [r[1] for r in results]


# ------------------------------------------------------------ fitting


class Workspace:
    """Checkpoint and cache paths under an output directory (or none)."""

    def __init__(self, out=None):
        self.out = out

    def path(self, *parts):
        if self.out is None:
            return None
        p = os.path.join(self.out, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p


def reward_table(cfg: ScenarioConfig, ws: Workspace):
    reps = cfg.baselines.reward_replications
    path = ws.path("cache", f"table_{cfg.digest('mac', 'env', 'seed')}_R{reps}.json")
    if path and os.path.exists(path):
        with open(path) as fh:
            return bl.table_from_json(fh.read())
    table = bl.estimate_reward_table(cfg.env, cfg.mac, reps, seed=cfg.seed)
    if path:
        with open(path, "w") as fh:
            fh.write(bl.table_to_json(table))
    return table


def fit_rl(cfg: ScenarioConfig, ws: Workspace, allow_train=True, progress_every=0):
    acfg = cfg.agent_config()
    key = cfg.digest("mac", "env", "agent", "seed", "profile")
    path = ws.path("checkpoints", f"rl_{key}.cwnn")
    if path and os.path.exists(path):
        return load_checkpoint(path, seed=cfg.seed), None
    if not allow_train:
        raise InvalidState(f"no RL checkpoint at {path} and training is disabled")
    agent, tlog = train(cfg.env, cfg.mac, acfg, seed=cfg.seed, progress_every=progress_every)
    if path:
        save_checkpoint(path, agent)
        tlog.to_csv(ws.path(f"training_log_{key}.csv"))
    return agent, tlog


def fit_rf(cfg: ScenarioConfig, table, ws: Workspace):
    b = cfg.baselines
    path = ws.path("cache", f"forest_{cfg.digest('mac', 'env', 'baselines', 'seed')}.json")
    if path and os.path.exists(path):
        with open(path) as fh:
            return Forest.from_json(fh.read())
    env = ContentionEnv(cfg.env, cfg.mac)
    # data-collection episodes live in their own id range
    X, y = rf_generate_dataset(env, table, b.rf_episodes, seed=cfg.seed + 7919)
    forest = rf_train(X, y, len(cfg.env.action_space), b.rf_trees, b.rf_depth, seed=cfg.seed)
    if path:
        with open(path, "w") as fh:
            fh.write(forest.to_json())
    return forest


def build_policies(cfg: ScenarioConfig, out=None, allow_train=True, progress_every=0):
    ws = Workspace(out)
    policies, extras = {}, {}
    need_table = any(m in cfg.methods for m in ("OPT", "CP", "RF"))
    table = reward_table(cfg, ws) if need_table else None
    extras["reward_table"] = table
    for m in cfg.methods:
        if m == "RL":
            agent, tlog = fit_rl(cfg, ws, allow_train, progress_every)
            policies[m] = RLPolicy(agent)
            extras["training_log"] = tlog
        elif m == "OPT":
            opt = bl.opt_policy(table, cfg.env)
            policies[m] = TablePolicy(opt)
            extras["opt"] = opt
        elif m == "CP":
            idx, scores = bl.cp_search(table, cfg.env, cfg.baselines.cp_episodes, seed=cfg.seed)
            policies[m] = ConstantPolicy(idx)
            extras["cp_scores"] = scores
        elif m == "SP":
            policies[m] = ConstantPolicy(bl.sp_action(cfg.env.action_space))
        elif m == "FI":
            policies[m] = FairnessIndexPolicy(cfg.baselines.fi_threshold, cfg.baselines.fi_updates)
        elif m == "RF":
            policies[m] = ForestPolicy(fit_rf(cfg, table, ws))
    return policies, extras


def run_scenario(cfg: ScenarioConfig, out=None, allow_train=True, workers=1, progress_every=0):
    policies, extras = build_policies(cfg, out, allow_train, progress_every)
    metrics = RunMetrics(extras=extras)
    for m in cfg.methods:
        log.info("evaluating %s on %d episodes", m, cfg.eval_episodes)
        vals, traj = evaluate(cfg, policies[m], workers=workers)
        metrics.per_episode[m] = vals
        metrics.trajectories[m] = traj
    return metrics


def run_sweep(cfg: ScenarioConfig, out=None, allow_train=True, workers=1, progress_every=0):
    """Re-run the scenario for each swept value; returns {value: RunMetrics}."""
    if not cfg.sweep:
        raise InvalidParameter("config has no sweep section")
    param, values = cfg.sweep["param"], cfg.sweep["values"]
    results = {}
    for v in values:
        sub = cfg.with_env(**{param: int(v)}).with_(sweep=None)
        sub_out = None if out is None else os.path.join(out, f"{param}_{v}")
        results[v] = run_scenario(sub, sub_out, allow_train, workers, progress_every)
    return results


# ------------------------------------------------------------ export


def _fmt(x):
    return repr(float(x))


def write_per_episode(path, metrics: RunMetrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PER_EPISODE_COLUMNS)
        for m, vals in metrics.per_episode.items():
            for e, v in enumerate(vals):
                w.writerow([m, e, _fmt(v)])


def write_summary(path, metrics: RunMetrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for m, s in metrics.summary().items():
            w.writerow([m, s["n"]] + [_fmt(s[k]) for k in SUMMARY_COLUMNS[2:-1]] + [len(s["outliers"])])


def write_histogram(path, metrics: RunMetrics, methods=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTOGRAM_COLUMNS)
        for m, vals in metrics.per_episode.items():
            if methods and m not in methods:
                continue
            counts, edges = histogram(vals)
            for c, lo, hi in zip(counts, edges, edges[1:]):
                w.writerow([m, f"{lo:.2f}", f"{hi:.2f}", int(c)])


def export(metrics: RunMetrics, out):
    os.makedirs(out, exist_ok=True)
    paths = {
        "per_episode": os.path.join(out, "per_episode.csv"),
        "summary": os.path.join(out, "summary.csv"),
        "histogram": os.path.join(out, "histogram.csv"),
    }
    write_per_episode(paths["per_episode"], metrics)
    write_summary(paths["summary"], metrics)
    write_histogram(paths["histogram"], metrics)
    return paths


def export_sweep(results, param, out):
    os.makedirs(out, exist_ok=True)
    paths = []
    for v, metrics in results.items():
        p = os.path.join(out, f"histogram_{param}{v}.csv")
        write_histogram(p, metrics)
        paths.append(p)
    means = os.path.join(out, "sweep_means.csv")
    with open(means, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([param, "method", "mean_utility"])
        for v, metrics in results.items():
            for m, mean in metrics.means().items():
                w.writerow([v, m, _fmt(mean)])
    paths.append(means)
    return paths
