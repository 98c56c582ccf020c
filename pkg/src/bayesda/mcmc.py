"""Metropolis-Hastings, the pCN kernel, and exact finite-state checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ConvergenceError, as_generator, as_spd
from .metrics import DiscreteDist


@dataclass(frozen=True)
class ProposalKernel:
    """``sampler(state, rng) -> candidate``; ``log_density(u, v)`` is log q(u, v).

    When ``symmetric`` is set the density is never evaluated.
    """

    sampler: Callable
    log_density: Callable | None = None
    symmetric: bool = False

    def __post_init__(self):
        if not self.symmetric and self.log_density is None:
            raise ValueError("asymmetric proposal needs a log_density")


@dataclass(frozen=True)
class TargetDensity:
    log_unnormalized: Callable

    def __call__(self, u) -> float:
        return float(self.log_unnormalized(u))


def random_walk(scale) -> ProposalKernel:
    """Symmetric Gaussian random walk with covariance ``scale`` (scalar or matrix)."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))

    def sampler(u, rng):
        u = np.atleast_1d(u)
        if scale.shape == (1, 1):
            return u + np.sqrt(scale[0, 0]) * rng.standard_normal(u.shape)
        return u + as_spd(scale).chol @ rng.standard_normal(u.shape)

    return ProposalKernel(sampler, symmetric=True)


def _accept(log_a: float, rng: np.random.Generator) -> bool:
    # a uniform is always consumed so streams stay aligned
    u = rng.random()
    if log_a >= 0.0:
        return True
    return bool(u < np.exp(log_a))


def mh_step(state, target, proposal: ProposalKernel, rng):
    """One Metropolis-Hastings move. Returns ``(state, accepted)``."""
    rng = as_generator(rng)
    log_pi = target if callable(target) else target.log_unnormalized
    lp_u = float(log_pi(state))
    if not np.isfinite(lp_u):
        raise ValueError("target density is zero at the current state (invalid chain state)")
    cand = proposal.sampler(state, rng)
    lp_v = float(log_pi(cand))
    if lp_v == -np.inf:
        log_a = -np.inf
    else:
        log_a = lp_v - lp_u
        if not proposal.symmetric:
            log_a += proposal.log_density(cand, state) - proposal.log_density(state, cand)
    if _accept(min(log_a, 0.0), rng):
        return cand, True
    return state, False


def pcn_step(state, prior_cov, beta: float, log_g, support=None, rng=None):
    """Preconditioned Crank-Nicolson move for a N(0, prior_cov)-based target.

    The target is proportional to g(u) 1_B(u) N(0, prior_cov); ``support`` is
    the indicator of B (``None`` means everywhere).
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    rng = as_generator(rng)
    C = as_spd(prior_cov)
    u = np.atleast_1d(np.asarray(state, dtype=float))
    xi = C.chol @ rng.standard_normal(u.shape)
    cand = np.sqrt(1.0 - beta**2) * u + beta * xi
    if support is not None and not support(cand):
        rng.random()
        return u, False
    log_a = float(log_g(cand)) - float(log_g(u))
    if _accept(min(log_a, 0.0), rng):
        return cand, True
    return u, False


def run_chain(init, step_fn, n_steps: int, rng):
    """Iterate ``step_fn(state, rng) -> (state, accepted)``.

    Returns ``(samples, acceptance_rate)`` where row i is the state after
    step i + 1. Burn-in is left to the caller.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = as_generator(rng)
    state = np.atleast_1d(np.asarray(init, dtype=float))
    out = np.empty((n_steps, state.size))
    accepted = 0
    for i in range(n_steps):
        state, acc = step_fn(state, rng)
        accepted += bool(acc)
        out[i] = state
    return out, accepted / n_steps


# --------------------------------------------------------------------------
# Finite state spaces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteChain:
    kernel: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.kernel, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("kernel must be square")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("kernel must be row-stochastic")
        object.__setattr__(self, "kernel", P)

    @property
    def epsilon(self) -> float:
        return float(self.kernel.min())


def mh_kernel(proposal, target) -> np.ndarray:
    """Transition matrix of Metropolis-Hastings on a finite state space.

    ``proposal[i, j]`` is q(i, j); ``target`` may be unnormalized.
    """
    q = np.asarray(proposal, dtype=float)
    pi = np.asarray(target, dtype=float)
    S = q.shape[0]
    P = np.zeros_like(q)
    for i in range(S):
        for j in range(S):
            if i != j and q[i, j] > 0:
                ratio = (pi[j] * q[j, i]) / (pi[i] * q[i, j])
                P[i, j] = q[i, j] * min(ratio, 1.0)
        P[i, i] = 1.0 - (P[i].sum() - P[i, i])
    return P


def invariant_distribution(chain: FiniteChain, tol: float = 1e-12,
                           max_iter: int = 100_000) -> np.ndarray:
    P = chain.kernel
    S = P.shape[0]
    top = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
    if S > 1 and top[1] > 1.0 - 1e-10:
        raise ConvergenceError("chain is reducible or periodic: no unique limit")
    pi = np.arange(1, S + 1, dtype=float)
    pi /= pi.sum()
    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) <= tol:
            # polish the fixed point with one dense least-squares solve
            A = np.vstack([(P - np.eye(S)).T, np.ones((1, S))])
            b = np.zeros(S + 1)
            b[-1] = 1.0
            exact = np.linalg.lstsq(A, b, rcond=None)[0]
            return np.clip(exact, 0.0, None) / np.clip(exact, 0.0, None).sum()
        pi = nxt
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def finite_tv_decay(chain: FiniteChain, pi0: DiscreteDist, n: int):
    """TV distance of pi0 P^k from the invariant law for k = 1..n.

    Returns ``(tv_seq, epsilon, invariant)`` with ``tv_seq[k - 1]`` the
    distance after k steps.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    invariant = invariant_distribution(chain)
    tv = np.empty(n)
    p = pi0.probs.copy()
    for k in range(n):
        p = p @ chain.kernel
        tv[k] = 0.5 * np.abs(p - invariant).sum()
    return tv, chain.epsilon, DiscreteDist(invariant / invariant.sum())
