"""Scenario 3: all methods for N = 5, 10, 20 nodes."""

import argparse
import logging

from cw_arena.config import preset
from cw_arena.harness import export_sweep, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=["desk", "paper"], default="desk")
    ap.add_argument("--nodes", type=int, nargs="+", default=[5, 10, 20])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/nsweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = preset("scenario3", args.profile, seed=args.seed)
    cfg = cfg.with_(sweep={"param": "n_nodes", "values": args.nodes})
    results = run_sweep(cfg, args.out, progress_every=100)
    export_sweep(results, "n_nodes", args.out)
    for n, metrics in results.items():
        means = metrics.means()
        spread = max(means.values()) - min(means.values())
        print(f"N={n}: " + ", ".join(f"{k} {v:.4f}" for k, v in means.items()) + f"  (spread {spread:.4f})")


if __name__ == "__main__":
    main()
