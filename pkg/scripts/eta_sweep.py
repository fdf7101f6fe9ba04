#!/usr/bin/env python3
"""Sweep the regularization strength and tabulate the differential MSD.

Runs the fig5 preset: for each coupling kind and strength eta, the
steady-state network MSD minus the eta = 0 baseline, per schedule stage.
Negative values mean the coupled algorithm beats plain diffusion.

Usage:
    python scripts/eta_sweep.py [--runs 50] [--out results] [--jobs N]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from proxdiff.harness import load_scenario, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--out", default="results")
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args()

    scen = load_scenario("fig5", runs=args.runs)
    res = run_experiment(scen, out_dir=args.out, jobs=args.jobs)
    table = res.summary["sweep"]
    for kind, per_eta in table.items():
        print(f"\n== {kind}: MSD(eta) - MSD(0) [dB] ==")
        print(f"{'eta':>6s} {'stage1':>8s} {'stage2':>8s} {'stage3':>8s}")
        for eta in sorted(per_eta, key=float):
            row = per_eta[eta]
            print(f"{float(eta):6.2f} " +
                  " ".join(f"{row[str(s)]:8.2f}" for s in (0, 1, 2)))
    print(f"\nwrote {res.paths['summary']}")


if __name__ == "__main__":
    main()
