"""Run the repeated-partition synthetic experiment and cache results.

    python3 scripts/run_synthetic_protocol.py --scenario 2 --k 10
    python3 scripts/run_synthetic_protocol.py --all

Each partition's summary is appended to results/protocol_s{scenario}_K{K}.json
as soon as it finishes, so an interrupted run resumes where it stopped.
"""
import argparse
import logging
import time
from pathlib import Path

import numpy as np

from wdr.experiments import ProtocolConfig, brier_gap, majority_vote, run_protocol

RESULTS = Path(__file__).resolve().parent.parent / "results"
RUNS = [(1, 10), (2, 10), (2, 1)]


def cache_path(scenario, K):
    return RESULTS / f"protocol_s{scenario}_K{K}.json"


def summarize(doc):
    parts = doc["partitions"]
    active = [p["active_subevents"] for p in parts]
    a = np.array([p["a_mean"] for p in parts])
    print(f"  partitions: {len(parts)}  majority active sub-events: {majority_vote(active)}")
    print(f"  active per partition: {active}")
    print(f"  a mean over partitions: {a.mean():.4f} (range {a.min():.3f}-{a.max():.3f})")
    print(f"  seconds per partition: {np.mean([p['seconds'] for p in parts]):.0f}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", type=int, choices=(1, 2))
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--all", action="store_true", help="scenario 1 K=10, scenario 2 K=10 and K=1")
    p.add_argument("--partitions", type=int, default=20)
    p.add_argument("--iters", type=int, default=20_000)
    p.add_argument("--burnin", type=int, default=15_000)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    runs = RUNS if args.all else [(args.scenario, args.k)]
    docs = {}
    started = time.perf_counter()
    for sc, K in runs:
        cfg = ProtocolConfig(scenario=sc, K=K, n_partitions=args.partitions,
                             n_iterations=args.iters, n_burnin=args.burnin)
        docs[(sc, K)] = run_protocol(cfg, cache_path(sc, K))
        print(f"scenario {sc}, K={K}")
        summarize(docs[(sc, K)])
    if (2, 10) in docs and (2, 1) in docs:
        for j in (1, 2):
            gap, se = brier_gap(docs[(2, 10)], docs[(2, 1)], j)
            print(f"scenario 2 event {j}: Brier(K=1) - Brier(K=10) at last time = {gap:.4f} "
                  f"(pooled s.e. {se:.4f})")
    print(f"total {time.perf_counter() - started:.0f} s")


if __name__ == "__main__":
    main()
