"""Extended and ensemble Kalman filters (nonlinear dynamics, linear observations)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Gaussian,
    RngStream,
    SpdMatrix,
    ensemble_normals,
    as_spd,
    sample_gaussian,
    symmetrize,
)
from .kalman import kf_update_gain
from .variational import NonlinearModel


@dataclass(frozen=True)
class EmpiricalMoments:
    mean: np.ndarray
    cov: np.ndarray


def exkf_predict(post: Gaussian, model: NonlinearModel) -> Gaussian:
    if model.jacobian_psi is None:
        raise ValueError("the extended Kalman filter needs model.jacobian_psi")
    D = model.jacobian(post.mean)
    cov = D @ post.cov.array @ D.T
    if model.Sigma is not None:
        cov = cov + model.Sigma.array
    return Gaussian(model.propagate(post.mean)[0], symmetrize(cov))


def exkf_step(post: Gaussian, model: NonlinearModel, y) -> Gaussian:
    """Linearized prediction followed by the exact Kalman analysis."""
    pred = exkf_predict(post, model)
    return kf_update_gain(pred, model.H, model.Gamma, y)[0]


def empirical_moments(members) -> EmpiricalMoments:
    """Ensemble mean and 1/N-normalized covariance."""
    X = np.atleast_2d(np.asarray(members, dtype=float))
    m = X.mean(axis=0)
    E = X - m
    return EmpiricalMoments(m, symmetrize(E.T @ E / X.shape[0]))


def enkf_predict(members, model: NonlinearModel, rng) -> np.ndarray:
    """Psi(v^(n)) + xi^(n); xi^(n) comes from particle slot n of ``rng``."""
    X = np.atleast_2d(np.asarray(members, dtype=float))
    out = model.propagate(X)
    if model.Sigma is not None:
        out = out + ensemble_normals(rng, *X.shape) @ model.Sigma.chol.T
    return out


def perturbed_observations(y, Gamma, n: int, s: int, rng) -> np.ndarray:
    """n copies of y, plus N(0, Gamma) noise per member when s = 1."""
    if s not in (0, 1):
        raise ValueError("s must be 0 or 1")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    Y = np.tile(y, (n, 1))
    if s:
        Y = Y + ensemble_normals(rng, n, y.size) @ as_spd(Gamma).chol.T
    return Y


def enkf_analysis(members, H, Gamma, y, s: int = 1, rng=None, y_pert=None) -> np.ndarray:
    """Gain-form analysis with the ensemble covariance.

    ``y_pert`` supplies the per-member data directly (shared-randomness checks).
    """
    X = np.atleast_2d(np.asarray(members, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Gamma = as_spd(Gamma)
    if y_pert is None:
        y_pert = perturbed_observations(y, Gamma, X.shape[0], s, rng)
    C = empirical_moments(X).cov
    S = SpdMatrix(symmetrize(H @ C @ H.T + Gamma.array))
    K = S.solve(H @ C).T
    return X + (y_pert - X @ H.T) @ K.T


def enkf_analysis_subspace(members, H, Gamma, y, s: int = 1, rng=None, y_pert=None) -> np.ndarray:
    """Analysis by minimizing, for each member, a quadratic over N anomaly coefficients.

    v^(n) = v_hat^(n) + (1/N) sum_m b_m (v_hat^(m) - m_hat), with b solving
    ((1/N) HE Gamma^{-1} HE^T + I) b = HE Gamma^{-1} (y^(n) - H v_hat^(n)),
    where the rows of HE are H (v_hat^(m) - m_hat).
    """
    X = np.atleast_2d(np.asarray(members, dtype=float))
    N = X.shape[0]
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Gamma = as_spd(Gamma)
    if y_pert is None:
        y_pert = perturbed_observations(y, Gamma, N, s, rng)
    E = X - X.mean(axis=0)
    HE = E @ H.T
    W = Gamma.solve(HE.T)  # k x N
    A = SpdMatrix(symmetrize(HE @ W / N + np.eye(N)))
    innov = y_pert - X @ H.T
    B = A.solve(HE @ Gamma.solve(innov.T))  # column n holds b for member n
    return X + (B.T @ E) / N


def exkf_filter(model: NonlinearModel, data) -> list[Gaussian]:
    post = model.init
    out = []
    for y in np.asarray(data, dtype=float).reshape(-1, model.dim_obs):
        post = exkf_step(post, model, y)
        out.append(post)
    return out


def enkf_filter(model: NonlinearModel, data, n_members: int, rng: RngStream,
                s: int = 1, subspace: bool = False):
    """Run the EnKF; returns the list of analysis ensembles for steps 1..J."""
    X = sample_gaussian(model.init, rng.at(phase="enkf-init", step=0), n_members)
    analysis = enkf_analysis_subspace if subspace else enkf_analysis
    out = []
    for j, y in enumerate(np.asarray(data, dtype=float).reshape(-1, model.dim_obs), start=1):
        X = enkf_predict(X, model, rng.at(phase="enkf-predict", step=j))
        X = analysis(X, model.H, model.Gamma, y, s, rng.at(phase="enkf-perturb", step=j))
        out.append(X)
    return out
