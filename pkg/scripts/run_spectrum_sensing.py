#!/usr/bin/env python3
"""Run the cognitive-radio spectrum-sensing scenario.

Compares non-cooperating clusters (eta = 0) with l1-coupled clusters and
prints, per cluster, the reconstruction error of each source's coefficient
block, exposing which primary-user spectra the censored clusters miss
without cooperation.

Usage:
    python scripts/run_spectrum_sensing.py [--runs 20] [--out results] [--jobs N]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from proxdiff.analysis import to_db
from proxdiff.harness import load_scenario, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--out", default="results")
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args()

    scen = load_scenario("spectrum", runs=args.runs)
    res = run_experiment(scen, out_dir=args.out, jobs=args.jobs)
    for name, curves in res.curves.items():
        print(f"\n{name}: trailing network MSD "
              f"{to_db(curves.steady_state['network'][0]):.2f} dB")
        blocks = res.summary["variants"][name]["block_errors"]
        for cluster, errs in blocks.items():
            cells = "  ".join(f"{b}={e:.4g}" for b, e in errs.items())
            print(f"  {cluster}: {cells}")
    print(f"\nwrote {res.paths['curves']}")


if __name__ == "__main__":
    main()
