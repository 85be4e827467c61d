"""Run every scenario on its default grid and write CSVs plus a manifest.

    python scripts/reproduce_all.py --out results --workers 4

The full-Hamiltonian sweeps share one moment cache, so fig1/fig2/fig4 cost a
single set of propagations per coupling and cutoff.
"""
import argparse
import time
from pathlib import Path

from trispdc.cli import RunConfig, emit_csv, write_manifest
from trispdc.experiments import RUNNERS, MomentCache, Scenario, SweepGrid
from trispdc.fock import ModeSystem


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--out", default="results")
    parser.add_argument("--cutoff", type=int, default=8)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--n-samples", type=int, default=200)
    parser.add_argument("--only", nargs="*", choices=[s.value for s in Scenario])
    args = parser.parse_args()

    out = Path(args.out)
    sys = ModeSystem(cutoff=args.cutoff)
    cache = MomentCache()
    summary = {}
    for scenario in Scenario:
        if args.only and scenario.value not in args.only:
            continue
        start = time.perf_counter()
        grid = SweepGrid(scenario, n_samples=args.n_samples)
        res = RUNNERS[scenario](grid, sys=sys, cache=cache, workers=args.workers)
        emit_csv(res, out)
        elapsed = time.perf_counter() - start
        bad = sum(not c.converged for c in res.cells)
        summary[scenario.value] = f"{len(res.cells)} cells, {bad} unconverged, {elapsed:.0f} s"
        print(f"{scenario.value}: {summary[scenario.value]}", flush=True)
    write_manifest(out / "manifest.txt", RunConfig(cutoff=args.cutoff, workers=args.workers), summary)


if __name__ == "__main__":
    main()
