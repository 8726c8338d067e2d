"""Command line entry point: ``cw-arena <simulate|train|eval|sweep|oracle>``.

Exit codes: 0 success, 1 runtime failure, 2 malformed configuration or usage.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import baselines as bl
from .config import METHODS, ConfigError, load_config, preset, resolve_seed
from .env import ContentionEnv
from .errors import InvalidConfiguration
from .harness import (
    build_policies,
    export,
    export_sweep,
    fit_rl,
    reward_table,
    run_scenario,
    run_sweep,
    Workspace,
)
from .seeding import stream

log = logging.getLogger("cw_arena")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML scenario file")
    common.add_argument("--scenario", default="scenario1", help="built-in preset when --config is absent")
    common.add_argument("--profile", choices=["desk", "paper"], default="desk")
    common.add_argument("--p", type=float, default=None, help="background switching probability (presets only)")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config and $CW_ARENA_SEED)")
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--method", default=None, help="comma-separated subset of " + ",".join(METHODS))
    common.add_argument("--episodes", type=int, default=None)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cw-arena", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="raw intervals under uniformly random node-0 MCWs")
    sub.add_parser("train", parents=[common], help="train the RL agent and save a checkpoint")
    ev = sub.add_parser("eval", parents=[common], help="evaluate policies on paired episodes")
    ev.add_argument("--no-train", action="store_true", help="fail instead of training a missing RL checkpoint")
    sw = sub.add_parser("sweep", parents=[common], help="memory or network-size sweep")
    sw.add_argument("--no-train", action="store_true")
    sub.add_parser("oracle", parents=[common], help="reward table and OPT policy")
    return p


def _config(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.scenario, args.profile, p=args.p)
    cfg = cfg.with_(seed=resolve_seed(cfg.seed, args.seed))
    if args.method:
        methods = tuple(m.strip() for m in args.method.split(",") if m.strip())
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {bad}", "--method")
        cfg = cfg.with_(methods=methods)
    return cfg


def cmd_simulate(cfg, args):
    n_ep = args.episodes or 1
    env = ContentionEnv(cfg.env, cfg.mac)
    path = os.path.join(args.out, "intervals.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "step", "background_mcw", "own_mcw", "f", "b", "utility"])
        for ep in range(n_ep):
            rng = stream(cfg.seed, ep, "sim")
            env.reset(cfg.seed, ep)
            while not env.done:
                a = int(rng.integers(len(env.space)))
                _, r, obs = env.step(a)
                w.writerow([ep, env.t, env.hidden.mcw, env.space[a], repr(obs.f), repr(obs.b), repr(r)])
    print(path)


def cmd_train(cfg, args):
    if args.episodes:
        cfg = cfg.with_(agent={**cfg.agent, "episodes": args.episodes})
    agent, tlog = fit_rl(cfg, Workspace(args.out), progress_every=50 if args.verbose else 0)
    if tlog is None:
        print("checkpoint already present; nothing to do")
    else:
        print(f"trained {len(tlog)} episodes; final mean utility {tlog.rows[-1]['mean_utility']:.4f}")


def cmd_eval(cfg, args):
    if args.episodes:
        cfg = cfg.with_(eval_episodes=args.episodes)
    metrics = run_scenario(cfg, args.out, allow_train=not args.no_train, workers=args.workers,
                           progress_every=50 if args.verbose else 0)
    for p in export(metrics, args.out).values():
        print(p)
    for m, mean in metrics.means().items():
        print(f"{m:4s} {mean:.4f}")


def cmd_sweep(cfg, args):
    if args.episodes:
        cfg = cfg.with_(eval_episodes=args.episodes)
    if not cfg.sweep:
        raise ConfigError("no sweep section in the config", args.config or args.scenario, path="sweep")
    results = run_sweep(cfg, args.out, allow_train=not args.no_train, workers=args.workers,
                        progress_every=50 if args.verbose else 0)
    for p in export_sweep(results, cfg.sweep["param"], args.out):
        print(p)


def cmd_oracle(cfg, args):
    ws = Workspace(args.out)
    table = reward_table(cfg, ws)
    opt = bl.opt_policy(table, cfg.env)
    space = cfg.env.action_space.mcw_values
    path = os.path.join(args.out, "reward_table.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "background_mcw", "action_mcw", "mean_utility", "stderr"])
        states = cfg.env.process.build().states()
        for i, st in enumerate(states):
            for a, w0 in enumerate(space):
                w.writerow([str(st.key()), st.mcw, w0, repr(float(table.mean[i, a])), repr(float(table.stderr[i, a]))])
    path2 = os.path.join(args.out, "opt_policy.csv")
    with open(path2, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "background_mcw", "action_mcw", "q_value"])
        for i, st in enumerate(states):
            a = int(opt.actions[i])
            w.writerow([str(st.key()), st.mcw, space[a], repr(float(opt.q[i, a]))])
    print(path)
    print(path2)


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "oracle": cmd_oracle}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
    except InvalidConfiguration as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    try:
        COMMANDS[args.command](cfg, args)
    except InvalidConfiguration as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 1
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
