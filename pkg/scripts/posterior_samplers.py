"""Posterior mean and variance on a linear-Gaussian inverse problem from SMC, pCN and EKI.

The closed-form posterior is printed first for reference.
"""
import argparse

import numpy as np

from bayesda.core import Gaussian, RngStream, sample_gaussian
from bayesda.inversion import EkiState, TemperingSchedule, eki_run, smc_sample
from bayesda.mcmc import pcn_step, run_chain
from bayesda.variational import InverseProblem, linear_gaussian_posterior


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=2000)
    ap.add_argument("--J", type=int, default=10)
    ap.add_argument("--chain", type=int, default=50_000)
    ap.add_argument("--beta", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    A = np.array([[1.0, 0.5], [0.0, 1.0], [0.3, -0.2]])
    prior = Gaussian([0.0, 0.0], np.eye(2))
    Gamma = 0.1 * np.eye(3)
    y = np.array([1.2, -0.4, 0.3])
    prob = InverseProblem.gaussian(lambda u: A @ u, prior, Gamma)
    exact = linear_gaussian_posterior(A, Gamma, prior, y)
    stream = RngStream(args.seed, "samplers")

    rows = [("exact", exact.mean, np.diag(exact.cov.array))]
    smc = smc_sample(prob, y, TemperingSchedule(args.J), args.N, 5, args.beta, stream.at(phase="smc"))
    rows.append(("smc", smc.mean(), np.diag(smc.cov())))
    step = lambda u, g: pcn_step(u, prior.cov, args.beta, lambda v: -prob.misfit(v, y), rng=g)
    samples, rate = run_chain(prior.mean, step, args.chain, stream.at(phase="pcn").generator())
    tail = samples[args.chain // 5:]
    rows.append((f"pcn(acc={rate:.2f})", tail.mean(axis=0), tail.var(axis=0)))
    U0 = sample_gaussian(prior, stream.at(phase="eki"), args.N)
    eki = eki_run(EkiState(U0), lambda u: A @ u, Gamma, y, 1, perturb=True, rng=stream.at(phase="eki-pert"))
    U = eki.states[-1].members
    rows.append(("eki-1step", U.mean(axis=0), U.var(axis=0)))

    print("method,mean_1,mean_2,var_1,var_2")
    for name, m, v in rows:
        print(f"{name},{m[0]:.5f},{m[1]:.5f},{v[0]:.5f},{v[1]:.5f}")


if __name__ == "__main__":
    main()
