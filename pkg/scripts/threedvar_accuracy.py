"""Long-time 3DVAR error on the contractive benchmark for a range of noise levels.

The error should scale linearly with the observation noise s.d.
"""
import argparse

import numpy as np

from bayesda.core import RngStream
from bayesda.models import CONTRACTIVE_GAIN, make_benchmark, simulate
from bayesda.variational import run_3dvar


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gammas", default="0.3,0.1,0.03,0.01,0.003")
    ap.add_argument("--J", type=int, default=1000)
    ap.add_argument("--burn", type=int, default=500)
    ap.add_argument("--seeds", type=int, default=50)
    args = ap.parse_args()

    print("gamma,mean_abs_error,error_over_gamma")
    for gamma in (float(g) for g in args.gammas.split(",")):
        model = make_benchmark("contractive-3dvar", gamma=gamma)
        K = CONTRACTIVE_GAIN * model.H.T
        errs = []
        for s in range(args.seeds):
            run = simulate(model, args.J, RngStream(s, "3dvar"))
            means = run_3dvar(model, K, run.data)
            errs.append(np.mean(np.abs(means[args.burn - 1:] - run.truth[args.burn:])))
        e = float(np.mean(errs))
        print(f"{gamma},{e:.6g},{e / gamma:.4f}")


if __name__ == "__main__":
    main()
