"""Bootstrap, optimal and Gaussianized optimal particle filters.

Every step returns ``(uniform, weighted)``: the resampled equal-weight
ensemble that feeds the next step, and the weighted ensemble before
resampling, which is the lower-variance estimator of the filtering law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    NumericalError,
    RngStream,
    SpdMatrix,
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
    resample,
)

KERNEL_CHECK_RTOL = 1e-10


@dataclass(frozen=True)
class OpfKernel:
    """Gain K, proposal covariance C and weight covariance S of the optimal proposal."""

    K: np.ndarray
    C: SpdMatrix
    S: SpdMatrix


def _substreams(rng):
    """Independent draws for propagation and resampling."""
    if isinstance(rng, RngStream):
        return rng.at(phase=f"{rng.phase}:propagate"), rng.at(phase=f"{rng.phase}:resample")
    gen = as_generator(rng)
    return gen, gen


def _resample(weighted: WeightedEnsemble, rng) -> WeightedEnsemble:
    return resample(weighted, multinomial_uniforms(weighted.size, rng))


def _uniform_input(ens) -> np.ndarray:
    if isinstance(ens, WeightedEnsemble):
        if np.max(np.abs(ens.weights - 1.0 / ens.size)) > 1e-12:
            raise ValueError("particle filter steps expect an equal-weight ensemble")
        return ens.particles
    return np.atleast_2d(np.asarray(ens, dtype=float))


def effective_sample_size(weights) -> float:
    """1 / sum w^2 for normalized weights; lies in [1, N]."""
    w = np.asarray(weights, dtype=float)
    return 1.0 / math.fsum(w * w)


def _propagate(model, X) -> np.ndarray:
    P = model.propagate(X)
    if not np.all(np.isfinite(P)):
        raise NumericalError("dynamics produced non-finite particles")
    return P


def bpf_step(ens, model, y, rng):
    """Propagate through the dynamics, weight by the likelihood, resample."""
    X = _uniform_input(ens)
    prop_rng, res_rng = _substreams(rng)
    V = _propagate(model, X)
    if model.Sigma is not None:
        V = V + ensemble_normals(prop_rng, *V.shape) @ model.Sigma.chol.T
    y = np.atleast_1d(np.asarray(y, dtype=float))
    log_w = -0.5 * np.atleast_1d(weighted_sq_norm(model.Gamma, y - model.observe(V)))
    weighted = WeightedEnsemble(V, normalize_log_weights(log_w))
    return _resample(weighted, res_rng), weighted


def opf_kernel(Sigma, H, Gamma) -> OpfKernel:
    Sigma, Gamma = as_spd(Sigma), as_spd(Gamma)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape != (Gamma.dim, Sigma.dim):
        raise ValueError("H must be k x d for Sigma d x d and Gamma k x k")
    SHt = Sigma.array @ H.T
    S = SpdMatrix(symmetrize(H @ SHt + Gamma.array))
    K = S.solve(SHt.T).T
    C = symmetrize((np.eye(Sigma.dim) - K @ H) @ Sigma.array)
    # the precision form must give the same covariance
    C_prec = SpdMatrix(symmetrize(H.T @ Gamma.solve(H) + Sigma.inverse())).inverse()
    gap = np.max(np.abs(C - C_prec))
    if gap > KERNEL_CHECK_RTOL * max(1.0, np.max(np.abs(C))):
        raise NumericalError(f"gain and precision forms of C disagree by {gap:.3e}")
    return OpfKernel(K, SpdMatrix(C), S)


def _require_linear_obs(model):
    if model.h is not None:
        raise ValueError("optimal proposals need a linear observation operator")
    if model.Sigma is None:
        raise ValueError("optimal proposals need stochastic dynamics (Sigma)")


def opf_log_weights(psi_v, H, y, kernel: OpfKernel) -> np.ndarray:
    """-1/2 |y - H psi(v)|_S^2 per particle; depends on v_j only."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return -0.5 * np.atleast_1d(weighted_sq_norm(kernel.S, y - psi_v @ H.T))


def _opf_mean(psi_v, H, y, kernel: OpfKernel) -> np.ndarray:
    # (I - KH) psi(v) + K y
    return psi_v - (psi_v @ H.T) @ kernel.K.T + kernel.K @ np.atleast_1d(y)


def opf_step(ens, model, y, kernel: OpfKernel, rng):
    """Propagate with the data-informed proposal, weight by P(y | v_j), resample."""
    _require_linear_obs(model)
    X = _uniform_input(ens)
    prop_rng, res_rng = _substreams(rng)
    P = _propagate(model, X)
    log_w = opf_log_weights(P, model.H, y, kernel)
    V = _opf_mean(P, model.H, y, kernel) + ensemble_normals(prop_rng, *P.shape) @ kernel.C.chol.T
    weighted = WeightedEnsemble(V, normalize_log_weights(log_w))
    return _resample(weighted, res_rng), weighted


def gopf_step(ens, model, y, kernel: OpfKernel, rng):
    """Weight by P(y | v_j), resample v_j, then propagate with the optimal proposal.

    The weighted half of the result carries the proposal means
    (I - KH) psi(v_j) + K y with the pre-resampling weights; its weighted mean
    is the conditional expectation of the output mean.
    """
    _require_linear_obs(model)
    X = _uniform_input(ens)
    prop_rng, res_rng = _substreams(rng)
    P = _propagate(model, X)
    w = normalize_log_weights(opf_log_weights(P, model.H, y, kernel))
    means = _opf_mean(P, model.H, y, kernel)
    chosen = _resample(WeightedEnsemble(means, w), res_rng).particles
    V = chosen + ensemble_normals(prop_rng, *chosen.shape) @ kernel.C.chol.T
    return WeightedEnsemble.uniform(V), WeightedEnsemble(means, w)


@dataclass
class ParticleTrace:
    """Per-step filter output: weighted means/covariances and ESS."""

    means: list = field(default_factory=list)
    covs: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    ensembles: list = field(default_factory=list)


FILTERS = ("bpf", "opf", "gopf")


def particle_filter(model, data, n_particles: int, rng: RngStream, method: str = "bpf",
                    keep_ensembles: bool = False) -> ParticleTrace:
    """Run a particle filter over ``data`` (J x k)."""
    if method not in FILTERS:
        raise ValueError(f"unknown particle filter {method!r}; choose from {FILTERS}")
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    kernel = None
    if method != "bpf":
        _require_linear_obs(model)
        kernel = opf_kernel(model.Sigma, model.H, model.Gamma)
    X = sample_gaussian(model.init, rng.at(phase="pf-init", step=0), n_particles)
    trace = ParticleTrace()
    data = np.asarray(data, dtype=float).reshape(-1, model.dim_obs)
    if not np.all(np.isfinite(data)):
        raise ValueError("observations must be finite")
    for j, y in enumerate(data, start=1):
        step_rng = rng.at(phase=f"pf-{method}", step=j)
        try:
            if method == "bpf":
                uniform, weighted = bpf_step(X, model, y, step_rng)
            elif method == "opf":
                uniform, weighted = opf_step(X, model, y, kernel, step_rng)
            else:
                uniform, weighted = gopf_step(X, model, y, kernel, step_rng)
        except NumericalError as exc:
            raise type(exc)(f"step {j}: {exc}") from exc
        X = uniform.particles
        trace.means.append(weighted.mean())
        trace.covs.append(weighted.cov())
        trace.ess.append(effective_sample_size(weighted.weights))
        if keep_ensembles:
            trace.ensembles.append(weighted)
    return trace
