"""Scenario 1 at several switching probabilities: one output directory per p."""

import argparse
import logging
import os

from cw_arena.config import preset
from cw_arena.harness import export, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=["desk", "paper"], default="desk")
    ap.add_argument("--p", type=float, nargs="+", default=[1.0, 0.75])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/scenario1")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for p in args.p:
        cfg = preset("scenario1", args.profile, p=p, seed=args.seed)
        out = os.path.join(args.out, f"p{p}")
        metrics = run_scenario(cfg, out, progress_every=100)
        export(metrics, out)
        print(f"p={p}: " + ", ".join(f"{m} {v:.4f}" for m, v in metrics.means().items()))


if __name__ == "__main__":
    main()
