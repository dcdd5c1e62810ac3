#!/usr/bin/env python3
"""How often a displaced prior is caught, as a function of the displacement.

    python scripts/detection_sweep.py [--atoms 1000] [--trials 2000]

The prior is moved off the true phase by m standard deviations and the
second-step candidates are tested against it.
"""

import argparse
import math

import numpy as np

from seqphase.estimator import PhaseEstimate
from seqphase.protocol import detect_estimation_error, next_n
from seqphase.quantum_sim import Apparatus, EnsembleSpec, TruePhase
from seqphase.stats_core import Tolerance, angle_mixture_from_szn


def rate(offset, N, trials, tol, seed):
    s1 = 1 / math.sqrt(N)
    n = next_n(s1, tol)
    app = Apparatus(EnsembleSpec(N, seed=seed))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(trials):
        truth = float(rng.uniform(0.2, math.pi - 0.2)) * rng.choice([-1, 1])
        prior = PhaseEstimate(truth + rng.choice([-1, 1]) * offset * s1, s1)
        rec = app.sample_primary(TruePhase(truth), n)
        comp = app.sample_complementary(TruePhase(truth), n)
        alts = angle_mixture_from_szn(rec.s_z, n, N, sign=1 if comp.s_z >= 0 else -1, sigma=s1 / n)
        hits += detect_estimation_error(prior, alts, tol)
    return hits / trials, n


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--atoms", type=int, default=1000)
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    tol = Tolerance(0.01, 0.01)
    for m in np.arange(0.0, 8.01, 0.5):
        r, n = rate(m, args.atoms, args.trials, tol, args.seed)
        print(f"offset {m:4.1f} sigma  n = {n:3d}  detected {r:.3f}")


if __name__ == "__main__":
    main()
