"""Scenario 2 (zigzag background): RL and baselines for memory M = 1..4."""

import argparse
import logging

from cw_arena.config import preset
from cw_arena.harness import export_sweep, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=["desk", "paper"], default="desk")
    ap.add_argument("--memory", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/memory_sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = preset("scenario2", args.profile, seed=args.seed)
    cfg = cfg.with_(sweep={"param": "memory", "values": args.memory})
    results = run_sweep(cfg, args.out, progress_every=100)
    export_sweep(results, "memory", args.out)
    for m, metrics in results.items():
        print(f"M={m}: " + ", ".join(f"{k} {v:.4f}" for k, v in metrics.means().items()))


if __name__ == "__main__":
    main()
