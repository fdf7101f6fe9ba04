#!/usr/bin/env python3
"""Run the 20-node clustered-network comparison at desk scale.

Executes the fig3 preset (fixed coupling factors) and the fig6 preset
(sparsity-adaptive coupling factors) and prints the stage-wise steady-state
network MSD table for all six strategies.

Usage:
    python scripts/run_cluster_comparison.py [--runs 50] [--out results] [--jobs N]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from proxdiff.analysis import to_db
from proxdiff.harness import load_scenario, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--out", default="results")
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args()

    for preset in ("fig3", "fig6"):
        scen = load_scenario(preset, runs=args.runs)
        res = run_experiment(scen, out_dir=args.out, jobs=args.jobs)
        print(f"\n== {preset} ({args.runs} runs) steady-state network MSD [dB] ==")
        print(f"{'variant':12s} {'stage1':>8s} {'stage2':>8s} {'stage3':>8s}")
        for name, curves in res.curves.items():
            if curves is None:
                print(f"{name:12s} diverged")
                continue
            row = [to_db(curves.steady_state["network"][s]) for s in (0, 1, 2)]
            print(f"{name:12s} " + " ".join(f"{v:8.2f}" for v in row))
        print(f"wrote {res.paths['curves']}")


if __name__ == "__main__":
    main()
