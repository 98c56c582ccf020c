"""RMS gap of sampling filters to the Kalman filter as the ensemble grows.

    python scripts/filter_rates.py --model vector-lg-d4k2 --methods bpf,opf,enkf
"""
import argparse

import numpy as np

from bayesda.core import RngStream
from bayesda.ensemble import enkf_filter
from bayesda.kalman import kalman_filter
from bayesda.models import make_benchmark, simulate
from bayesda.particle import particle_filter


def filter_means(model, data, method, N, seed):
    rng = RngStream(seed, method)
    if method == "enkf":
        return np.array([X.mean(axis=0) for X in enkf_filter(model, data, N, rng)])
    return np.array(particle_filter(model, data, N, rng, method).means)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="scalar-lg")
    ap.add_argument("--methods", default="bpf,opf,gopf,enkf")
    ap.add_argument("--Ns", default="100,400,1600,6400")
    ap.add_argument("--J", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = make_benchmark(args.model)
    data = simulate(model, args.J, RngStream(args.seed, "data")).data
    ref = kalman_filter(model, data).means
    Ns = [int(n) for n in args.Ns.split(",")]
    print("method,N,rms_gap")
    for method in args.methods.split(","):
        rms = []
        for N in Ns:
            sq = [np.mean(np.sum((filter_means(model, data, method, N, 1000 * args.seed + s) - ref) ** 2, axis=1))
                  for s in range(args.seeds)]
            rms.append(np.sqrt(np.mean(sq)))
            print(f"{method},{N},{rms[-1]:.6g}")
        slope = np.polyfit(np.log(Ns), np.log(rms), 1)[0]
        print(f"# {method}: log-log slope {slope:.3f}")


if __name__ == "__main__":
    main()
