"""Exact linear-Gaussian filtering and smoothing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DimensionError, Gaussian, SpdMatrix, as_spd, symmetrize


@dataclass(frozen=True)
class LinearModel:
    """v_{j+1} = M v_j + xi_j,  y_{j+1} = H v_{j+1} + eta_{j+1}."""

    M: np.ndarray
    H: np.ndarray
    Sigma: SpdMatrix
    Gamma: SpdMatrix
    init: Gaussian

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        Sigma, Gamma = as_spd(self.Sigma), as_spd(self.Gamma)
        d = self.init.dim
        if M.shape != (d, d) or Sigma.dim != d:
            raise DimensionError("M and Sigma must be d x d with d the state dimension")
        if H.shape != (Gamma.dim, d):
            raise DimensionError("H must be k x d with k the side of Gamma")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "Gamma", Gamma)

    @property
    def dim_state(self) -> int:
        return self.init.dim

    @property
    def dim_obs(self) -> int:
        return self.H.shape[0]

    # duck-typed to match NonlinearModel so every filter accepts either
    h = None
    vectorized = True

    def psi(self, v):
        return np.asarray(v) @ self.M.T

    def jacobian_psi(self, v):
        return self.M

    def jacobian(self, v):
        return self.M

    def propagate(self, X):
        return np.atleast_2d(X) @ self.M.T

    def observe(self, X):
        return np.atleast_2d(X) @ self.H.T


@dataclass
class FilterTrace:
    predicted: list = field(default_factory=list)
    updated: list = field(default_factory=list)
    gains: list = field(default_factory=list)
    innovations: list = field(default_factory=list)

    @property
    def means(self) -> np.ndarray:
        return np.array([g.mean for g in self.updated])

    @property
    def covs(self) -> np.ndarray:
        return np.array([g.cov.array for g in self.updated])


def kf_predict(post: Gaussian, M, Sigma) -> Gaussian:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    Sigma = as_spd(Sigma)
    if M.shape != (post.dim, post.dim) or Sigma.dim != post.dim:
        raise DimensionError("dynamics do not match the state dimension")
    cov = symmetrize(M @ post.cov.array @ M.T + Sigma.array)
    return Gaussian(M @ post.mean, cov)


def _obs_args(pred: Gaussian, H, Gamma, y):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Gamma = as_spd(Gamma)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if H.shape != (Gamma.dim, pred.dim) or y.shape != (Gamma.dim,):
        raise DimensionError("observation operator, noise and datum disagree in shape")
    return H, Gamma, y


def kf_update_precision(pred: Gaussian, H, Gamma, y) -> Gaussian:
    """Analysis by assembling the posterior precision C^{-1} = C_hat^{-1} + H^T Gamma^{-1} H."""
    H, Gamma, y = _obs_args(pred, H, Gamma, y)
    prec = pred.cov.inverse() + H.T @ Gamma.solve(H)
    rhs = pred.cov.solve(pred.mean) + H.T @ Gamma.solve(y)
    P = SpdMatrix(symmetrize(prec))
    return Gaussian(P.solve(rhs), symmetrize(P.inverse()))


def kf_update_gain(pred: Gaussian, H, Gamma, y):
    """Standard (gain) form; only the k x k innovation covariance is factorized.

    Returns ``(posterior, gain, innovation)``.
    """
    H, Gamma, y = _obs_args(pred, H, Gamma, y)
    C_hat = pred.cov.array
    S = SpdMatrix(symmetrize(H @ C_hat @ H.T + Gamma.array))
    K = S.solve(H @ C_hat).T
    d = y - H @ pred.mean
    mean = pred.mean + K @ d
    cov = symmetrize((np.eye(pred.dim) - K @ H) @ C_hat)
    return Gaussian(mean, cov), K, d


def kalman_filter(model: LinearModel, data) -> FilterTrace:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise ValueError("data must be nonempty")
    if data.shape[1] != model.dim_obs:
        data = data.reshape(-1, model.dim_obs)
    trace = FilterTrace()
    post = model.init
    for y in data:
        pred = kf_predict(post, model.M, model.Sigma)
        post, K, d = kf_update_gain(pred, model.H, model.Gamma, y)
        trace.predicted.append(pred)
        trace.updated.append(post)
        trace.gains.append(K)
        trace.innovations.append(d)
    return trace


def _smoother_blocks(model: LinearModel, data):
    data = np.asarray(data, dtype=float).reshape(-1, model.dim_obs)
    J = data.shape[0]
    if J < 1:
        raise ValueError("data must be nonempty")
    M, H = model.M, model.H
    Sinv = model.Sigma.inverse()
    SinvM = Sinv @ M
    MtSinvM = M.T @ SinvM
    HtGinvH = H.T @ model.Gamma.solve(H)
    diag = [model.init.cov.inverse() + MtSinvM]
    diag += [Sinv + MtSinvM + HtGinvH for _ in range(1, J)]
    diag.append(Sinv + HtGinvH)
    # Omega_{j,j+1} = -M^T Sigma^{-1}, Omega_{j+1,j} = -Sigma^{-1} M, for j = 0..J-1
    upper = -SinvM.T
    r = [model.init.cov.solve(model.init.mean)]
    r += [H.T @ model.Gamma.solve(y) for y in data]
    return [symmetrize(D) for D in diag], upper, r


def smoother_system(model: LinearModel, data):
    """Dense block-tridiagonal precision Omega and right-hand side r of the smoothing posterior."""
    diag, upper, r = _smoother_blocks(model, data)
    d, n = model.dim_state, len(diag)
    Omega = np.zeros((n * d, n * d))
    for j, D in enumerate(diag):
        Omega[j * d:(j + 1) * d, j * d:(j + 1) * d] = D
        if j + 1 < n:
            Omega[j * d:(j + 1) * d, (j + 1) * d:(j + 2) * d] = upper
            Omega[(j + 1) * d:(j + 2) * d, j * d:(j + 1) * d] = upper.T
    return Omega, np.concatenate(r)


def kalman_smoother(model: LinearModel, data):
    """Smoothing means by block elimination on Omega m = r.

    Returns ``(means, block_precisions)``: means is (J+1) x d and
    ``block_precisions[j]`` is the eliminated pivot block Omega_j.
    """
    diag, upper, r = _smoother_blocks(model, data)
    lower = upper.T
    pivots = [SpdMatrix(diag[0])]
    z = [r[0]]
    for j in range(len(diag) - 1):
        # Schur complement of the leading j+1 blocks
        piv = pivots[j]
        nxt = diag[j + 1] - lower @ piv.solve(upper)
        pivots.append(SpdMatrix(symmetrize(nxt)))
        z.append(r[j + 1] - lower @ piv.solve(z[j]))
    J = len(diag) - 1
    means = np.empty((J + 1, model.dim_state))
    means[J] = pivots[J].solve(z[J])
    for j in range(J - 1, -1, -1):
        means[j] = pivots[j].solve(z[j] - upper @ means[j + 1])
    return means, pivots
