#!/usr/bin/env python3
"""Run every harness mode at the reference settings and print the headline numbers.

    python scripts/reproduce_results.py [--out results/] [--quick]

With --out each mode also writes <out>/<mode>.csv and <out>/<mode>.summary.json.
"""

import argparse
import math
import os
import time

from seqphase.harness import ExperimentConfig, run_experiment
from seqphase.magnetometry import FieldScenario
from seqphase.protocol import ProtocolParams
from seqphase.quantum_sim import EnsembleSpec
from seqphase.stats_core import Tolerance, nu_factor


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", help="directory for CSV and summary files")
    ap.add_argument("--quick", action="store_true", help="tenth of the trial counts")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()

    tol = Tolerance(0.01, 0.01)
    scale = 10 if args.quick else 1
    N = 1000
    spec = EnsembleSpec(N, N, 1.0, args.seed)
    field = FieldScenario(0.3, 1.0, 1e-6, 1.0, N)

    runs = [
        ("coverage", 10_000, ProtocolParams(tol, 3), {}),
        ("scaling", 2_000, ProtocolParams(tol, 3), {}),
        ("misclassification", 100_000, ProtocolParams(tol, 1), {}),
        ("dephasing", 1_000, ProtocolParams(tol, 3), {"spec": EnsembleSpec(N, N, math.exp(-0.01), args.seed)}),
        ("magnetometry", 40, ProtocolParams(tol, 5), {"scenario": field}),
        ("entropy_check", 1, ProtocolParams(tol, 1), {"sigma1": 0.03}),
    ]
    if args.out:
        os.makedirs(args.out, exist_ok=True)

    print(f"nu(0.01, 0.01) = {nu_factor(tol):.6f}")
    for mode, trials, params, extra in runs:
        kw = {"spec": spec, **extra}
        out = os.path.join(args.out, mode) if args.out else None
        cfg = ExperimentConfig(
            mode, max(1, trials // scale), kw.pop("spec"), params, seed=args.seed, threads=args.threads, output_path=out, **kw
        )
        t0 = time.perf_counter()
        res = run_experiment(cfg).results
        print(f"\n== {mode} ({cfg.trials} trials, {time.perf_counter() - t0:.1f} s)")
        report(mode, res)


def report(mode, res):
    if mode in ("coverage", "dephasing"):
        print(f"coverage {res['coverage_completed']:.4f} +- {res['coverage_completed_stderr']:.4f}"
              f" (target {res['target_confidence']:.4f}), restart rate {res['restart_rate']:.4f}")
        print(f"mean sigma {res['mean_sigma']:.4e}, nominal {res['mean_sigma_nominal']:.4e}")
        if mode == "dephasing":
            print(f"n_c = {res['n_c']:.1f}, scan minimum at n = {res['n_best']}, floor ratio {res['sigma_min_ratio']:.4f}")
    elif mode == "scaling":
        print(f"{'K':>2} {'N':>5} {'R':>12} {'delta emp':>11} {'delta pred':>11} {'restarts':>8}")
        for r in res["table"]:
            print(f"{r['K']:>2} {r['N']:>5} {r['R']:>12.0f} {r['delta_empirical']:>11.3e} {r['delta_predicted']:>11.3e} {r['restart_rate']:>8.4f}")
        for K, s in sorted(res["slopes"].items()):
            print(f"K={K}: slope {s['empirical']:+.4f} (nominal {s['nominal']:+.4f}, ideal {s['ideal']:+.4f})")
    elif mode == "misclassification":
        for r in res["per_phi"]:
            print(f"phi {r['phi']}: {r['errors']} / {r['trials']} wrong signs, predicted {r['predicted']:.3e}")
    elif mode == "magnetometry":
        print(f"offset B0 = {res['offset_b0']:.6f} G ({res['turns']} turns), K = {res['steps_planned']}")
        print(f"mean delta_B {res['mean_delta_b']:.3e} G; first step {res['delta_b_primary']:.3e} G;"
              f" tau_c bound {res['delta_b_coherence_bound']:.3e} G; failed {res['failed']}")
    elif mode == "entropy_check":
        for r in res["table"]:
            print(f"n = {r['n']:>2}: H = {r['entropy']:.10f} (delta {r['delta_vs_n1']:+.1e})")


if __name__ == "__main__":
    main()
