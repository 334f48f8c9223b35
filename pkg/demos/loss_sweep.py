"""Latency and edge share of both serving policies as edge packet loss grows.

    python demos/loss_sweep.py [--requests 3000] [--seed 0]
"""

import argparse

from lossyserve.confidence import calibrate, requirement_grid
from lossyserve.lossmodel import LossSpec
from lossyserve.servsim import SimConfig, gen_workload, simulate_policy
from lossyserve.traces import load_fixture_trace

ap = argparse.ArgumentParser()
ap.add_argument("--requests", type=int, default=3000)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

trace = load_fixture_trace()
table = calibrate(trace, requirement_grid())

print(f"{'loss':>6} {'policy':>8} {'mean ms':>8} {'P99 ms':>7} {'edge':>6} {'accuracy':>8} {'swaps':>6}")
for rate in (0.0, 0.001, 0.005, 0.01, 0.02):
    cfg = SimConfig(seed=args.seed, requests=args.requests, loss=LossSpec("bernoulli", rate))
    workload = gen_workload(cfg, len(set(trace.image_id.tolist())))
    for policy in ("dual", "baseline"):
        r = simulate_policy(cfg, policy, table, trace, workload)
        lat = r["latency_ms"]
        print(f"{rate:6.3f} {policy:>8} {lat['mean']:8.2f} {lat['p99']:7.2f} "
              f"{r['frontend_handled_fraction']:6.3f} {r['achieved_accuracy']:8.4f} {r['swap_count']:6d}")
