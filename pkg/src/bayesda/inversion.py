"""Filtering methods for static inverse problems: SMC tempering and ensemble Kalman inversion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    NumericalError,
    RngStream,
    SpdMatrix,
    WeightCollapseError,
    as_generator,
    as_spd,
    ensemble_normals,
    sample_gaussian,
    symmetrize,
    weighted_sq_norm,
)
from .sampling import (
    WeightedEnsemble,
    multinomial_uniforms,
    normalize_log_weights,
    resample_indices,
)
from .variational import InverseProblem


@dataclass(frozen=True)
class TemperingSchedule:
    """J equal increments h = 1/J from prior (temperature 0) to posterior (temperature 1)."""

    J: int

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 1:
            raise ValueError(f"J must be a positive integer, got {self.J}")

    @property
    def h(self) -> float:
        return 1.0 / self.J


@dataclass(frozen=True)
class EkiState:
    members: np.ndarray
    step: int = 0

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.members, dtype=float))
        if U.shape[0] < 1:
            raise ValueError("need at least one member")
        object.__setattr__(self, "members", U)

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


def _apply(G, U) -> np.ndarray:
    return np.array([np.atleast_1d(G(u)) for u in U], dtype=float)


def ensemble_covariance(U) -> np.ndarray:
    """1/N-normalized covariance of the rows of U."""
    U = np.atleast_2d(U)
    E = U - U.mean(axis=0)
    return E.T @ E / U.shape[0]


# --------------------------------------------------------------------------
# Ensemble Kalman inversion
# --------------------------------------------------------------------------

def eki_step(state: EkiState, G, Gamma, y, perturb: bool = False, rng=None) -> EkiState:
    """u <- u + C^{uw} (C^{ww} + Gamma)^{-1} (y^(n) - G(u^(n))), solved in data space."""
    Gamma = as_spd(Gamma)
    U = state.members
    N = U.shape[0]
    W = _apply(G, U)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    Eu = U - U.mean(axis=0)
    Ew = W - W.mean(axis=0)
    Cuw = Eu.T @ Ew / N
    Cww = Ew.T @ Ew / N
    Y = np.tile(y, (N, 1))
    if perturb:
        if rng is None:
            raise ValueError("perturbed observations need an rng")
        if isinstance(rng, RngStream):
            rng = rng.at(phase=f"{rng.phase}:perturb", step=state.step)
        Y = Y + ensemble_normals(rng, N, y.size) @ Gamma.chol.T
    S = SpdMatrix(symmetrize(Cww + Gamma.array))
    D = S.solve((Y - W).T)
    return EkiState(U + (Cuw @ D).T, state.step + 1)


@dataclass
class EkiTrace:
    """States 0..steps and per-member misfits 1/2 |y - G(u)|_Gamma^2 for each state."""

    states: list = field(default_factory=list)
    misfits: list = field(default_factory=list)

    @property
    def mean_residuals(self) -> np.ndarray:
        return np.array([np.sqrt(2.0 * m.mean()) for m in self.misfits])


def eki_run(init: EkiState, G, Gamma, y, steps: int, perturb: bool = False, rng=None) -> EkiTrace:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    Gamma = as_spd(Gamma)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    trace = EkiTrace()
    state = init
    for k in range(steps + 1):
        trace.states.append(state)
        trace.misfits.append(0.5 * np.atleast_1d(weighted_sq_norm(Gamma, y - _apply(G, state.members))))
        if k < steps:
            state = eki_step(state, G, Gamma, y, perturb, rng)
    return trace


def eki_ode_rhs(U, G, y, Gamma0) -> np.ndarray:
    """du^(n)/dt = -(1/N) sum_m D_mn u^(m), D_mn = <G(u^(n)) - y, G(u^(m)) - G_bar>_Gamma0."""
    Gamma0 = as_spd(Gamma0)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    W = _apply(G, U)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    # D[m, n]
    D = (W - W.mean(axis=0)) @ Gamma0.solve((W - y).T)
    return -(D.T @ U) / U.shape[0]


def covariance_ode_rhs(C, A, Gamma0) -> np.ndarray:
    """dC/dt = -2 C A^T Gamma0^{-1} A C for linear G = A."""
    A = np.atleast_2d(A)
    return -2.0 * C @ A.T @ as_spd(Gamma0).solve(A) @ C


@dataclass(frozen=True)
class EkiOdeTrajectory:
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1) x N x d
    losses: np.ndarray  # (n_steps + 1) x N


def eki_ode_integrate(U0, G, y, Gamma0, step_h: float, T: float) -> EkiOdeTrajectory:
    """Explicit Euler with fixed step on the continuous-time EKI flow."""
    if step_h <= 0 or T < step_h:
        raise ValueError("need step_h > 0 and T >= step_h")
    Gamma0 = as_spd(Gamma0)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n_steps = int(round(T / step_h))
    U = np.atleast_2d(np.asarray(U0, dtype=float)).copy()
    states = np.empty((n_steps + 1, *U.shape))
    losses = np.empty((n_steps + 1, U.shape[0]))
    for i in range(n_steps + 1):
        if not np.all(np.isfinite(U)):
            raise NumericalError(f"non-finite state at step {i}: step too large")
        states[i] = U
        losses[i] = 0.5 * np.atleast_1d(weighted_sq_norm(Gamma0, y - _apply(G, U)))
        if i < n_steps:
            # overflow is caught by the finiteness check above
            with np.errstate(over="ignore", invalid="ignore"):
                U = U + step_h * eki_ode_rhs(U, G, y, Gamma0)
    return EkiOdeTrajectory(step_h * np.arange(n_steps + 1), states, losses)


# --------------------------------------------------------------------------
# Sequential Monte Carlo by tempering
# --------------------------------------------------------------------------

def tempered_log_weights(losses, schedule: TemperingSchedule) -> np.ndarray:
    """Log-weights after composing all J reweightings exp(-h L0) with no resampling."""
    losses = np.asarray(losses, dtype=float)
    log_w = np.zeros_like(losses)
    for _ in range(schedule.J):
        log_w = log_w - schedule.h * losses
    return log_w


def _pcn_sweep(U, L, prior, beta, temp, problem, y, rng):
    """One vectorized pCN move per member targeting exp(-temp L0) N(m0, C0)."""
    N, d = U.shape
    xi = ensemble_normals(rng.at(phase=f"{rng.phase}:xi") if isinstance(rng, RngStream) else rng, N, d)
    cand = prior.mean + np.sqrt(1.0 - beta**2) * (U - prior.mean) + beta * xi @ prior.cov.chol.T
    L_cand = problem.misfit_batch(cand, y)
    if isinstance(rng, RngStream):
        r = rng.at(phase=f"{rng.phase}:accept").particle_uniforms(N, 1)[:, 0]
    else:
        r = as_generator(rng).random(N)
    log_a = np.minimum(-temp * (L_cand - L), 0.0)
    acc = np.log(r) < log_a
    U = np.where(acc[:, None], cand, U)
    L = np.where(acc, L_cand, L)
    return U, L, float(acc.mean())


def smc_sample(problem: InverseProblem, y, schedule: TemperingSchedule, N: int,
               mutation_steps: int, beta: float, rng: RngStream, diagnostics: list | None = None
               ) -> WeightedEnsemble:
    """Tempered SMC from the Gaussian prior to the posterior.

    At temperature j the particles are reweighted by exp(-h L0); for j < J
    they are then resampled and moved by ``mutation_steps`` pCN steps that
    leave exp(-j h L0) times the prior invariant. The weighted ensemble at
    temperature J (before any resampling) is returned. ``diagnostics``, if
    given, receives one dict per temperature with the ESS and acceptance rate.
    """
    if problem.prior is None:
        raise ValueError("SMC needs a Gaussian prior (InverseProblem.prior); other priors are unsupported")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if N < 1 or mutation_steps < 0:
        raise ValueError("need N >= 1 and mutation_steps >= 0")
    prior = problem.prior
    y = np.atleast_1d(np.asarray(y, dtype=float))
    h = schedule.h
    U = sample_gaussian(prior, rng.at(phase="smc-init", step=0), N)
    L = problem.misfit_batch(U, y)
    for j in range(1, schedule.J + 1):
        try:
            w = normalize_log_weights(-h * L)
        except WeightCollapseError as exc:
            raise WeightCollapseError(f"temperature {j}: {exc}") from exc
        weighted = WeightedEnsemble(U, w)
        rate = float("nan")
        if j < schedule.J:
            u = multinomial_uniforms(N, rng.at(phase="smc-resample", step=j))
            idx = resample_indices(w, u)
            U, L = U[idx], L[idx]
            rates = []
            for k in range(mutation_steps):
                U, L, a = _pcn_sweep(U, L, prior, beta, j * h, problem, y,
                                     rng.at(phase=f"smc-mutate-{k}", step=j))
                rates.append(a)
            rate = float(np.mean(rates)) if rates else rate
        if diagnostics is not None:
            diagnostics.append({"temperature": j, "ess": 1.0 / float(np.sum(w * w)),
                                "acceptance": rate})
    return weighted
