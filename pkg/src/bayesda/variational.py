"""Optimization-based estimators: 3DVAR, 4DVAR, MAP and best-Gaussian fits.

All minimizations run through :func:`minimize`, a gradient descent with
Armijo backtracking. Gradients are analytic where a Jacobian is supplied
and central finite differences otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    DimensionError,
    Gaussian,
    NumericalError,
    RngStream,
    SpdMatrix,
    as_spd,
    symmetrize,
    weighted_sq_norm,
)

ARMIJO_C = 1e-4
SHRINK = 0.5


@dataclass(frozen=True)
class NonlinearModel:
    """v_{j+1} = psi(v_j) + xi_j,  y_{j+1} = H v_{j+1} + eta_{j+1}.

    ``Sigma=None`` means deterministic dynamics. ``vectorized`` says that
    ``psi`` maps an N x d array row-wise in one call. ``h`` optionally
    replaces the linear observation (bootstrap filter only).
    """

    psi: Callable
    H: np.ndarray
    Sigma: SpdMatrix | None
    Gamma: SpdMatrix
    init: Gaussian
    jacobian_psi: Callable | None = None
    vectorized: bool = False
    h: Callable | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        Gamma = as_spd(self.Gamma)
        Sigma = None if self.Sigma is None else as_spd(self.Sigma)
        d = self.init.dim
        if H.shape != (Gamma.dim, d):
            raise DimensionError("H must be k x d with k the side of Gamma")
        if Sigma is not None and Sigma.dim != d:
            raise DimensionError("Sigma must be d x d")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "Sigma", Sigma)

    @property
    def dim_state(self) -> int:
        return self.init.dim

    @property
    def dim_obs(self) -> int:
        return self.H.shape[0]

    def propagate(self, X) -> np.ndarray:
        """psi applied to every row of X."""
        X = np.atleast_2d(X)
        if self.vectorized:
            return np.asarray(self.psi(X), dtype=float).reshape(X.shape)
        return np.array([np.atleast_1d(self.psi(x)) for x in X], dtype=float)

    def observe(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.h is None:
            return X @ self.H.T
        return np.array([np.atleast_1d(self.h(x)) for x in X], dtype=float)

    def jacobian(self, v) -> np.ndarray:
        if self.jacobian_psi is None:
            raise ValueError("model has no jacobian_psi")
        return np.atleast_2d(np.asarray(self.jacobian_psi(v), dtype=float))


def as_nonlinear(model) -> NonlinearModel:
    """View a LinearModel as a NonlinearModel with psi(v) = M v."""
    if isinstance(model, NonlinearModel):
        return model
    M = model.M
    return NonlinearModel(
        psi=lambda v: np.asarray(v) @ M.T,
        H=model.H,
        Sigma=model.Sigma,
        Gamma=model.Gamma,
        init=model.init,
        jacobian_psi=lambda v: M,
        vectorized=True,
    )


@dataclass(frozen=True)
class InverseProblem:
    """y = G(u) + eta, eta ~ N(0, noise_cov), prior density exp(log_prior).

    ``prior`` is set when the prior is Gaussian; samplers that need to draw
    from the prior (SMC, pCN) require it.
    """

    forward: Callable
    log_prior: Callable
    noise_cov: SpdMatrix
    jacobian: Callable | None = None
    grad_log_prior: Callable | None = None
    prior: Gaussian | None = None

    def __post_init__(self):
        object.__setattr__(self, "noise_cov", as_spd(self.noise_cov))

    @classmethod
    def gaussian(cls, forward, prior: Gaussian, noise_cov, jacobian=None) -> "InverseProblem":
        """Problem with prior N(m0, C0); log_prior and its gradient are filled in."""
        return cls(
            forward=forward,
            log_prior=lambda u: -0.5 * weighted_sq_norm(prior.cov, np.atleast_1d(u) - prior.mean),
            noise_cov=noise_cov,
            jacobian=jacobian,
            grad_log_prior=lambda u: -prior.cov.solve(np.atleast_1d(u) - prior.mean),
            prior=prior,
        )

    def forward_batch(self, U) -> np.ndarray:
        """G applied to every row of U."""
        return np.array([np.atleast_1d(self.forward(u)) for u in np.atleast_2d(U)], dtype=float)

    def misfit(self, u, y) -> float:
        return 0.5 * weighted_sq_norm(self.noise_cov, y - np.atleast_1d(self.forward(u)))

    def misfit_batch(self, U, y) -> np.ndarray:
        """``misfit`` for every row of U."""
        return 0.5 * np.atleast_1d(weighted_sq_norm(self.noise_cov, y - self.forward_batch(U)))


# --------------------------------------------------------------------------
# Descent engine
# --------------------------------------------------------------------------

@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iter: int
    converged: bool


def fd_gradient(fun, x: np.ndarray, fx: float | None = None) -> np.ndarray:
    """Central differences with step 1e-6 (1 + |x_i|); one-sided where the other side is infinite."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    flat = x.ravel()
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(flat[i]))
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = fun(xp.reshape(x.shape)), fun(xm.reshape(x.shape))
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2 * h)
        else:
            f0 = fun(x) if fx is None else fx
            if np.isfinite(fm):
                g[i] = (f0 - fm) / h
            elif np.isfinite(fp):
                g[i] = (fp - f0) / h
            else:
                raise NumericalError(f"objective is infinite on both sides of coordinate {i}")
    return g.reshape(x.shape)


def minimize(fun, x0, grad=None, tol: float = 1e-8, max_iter: int = 10_000) -> OptimizeResult:
    """Gradient descent with Armijo backtracking (c = 1e-4, shrink 1/2).

    The trial step is the Barzilai-Borwein length from the previous two
    iterates; trial points with infinite objective are backtracked like
    any other failure of the sufficient-decrease test.
    """
    x = np.array(x0, dtype=float).ravel()
    shape = np.shape(x0)
    f = lambda z: float(fun(z.reshape(shape)))
    if grad is None:
        g_of = lambda z, fz: fd_gradient(f, z, fz)
    else:
        g_of = lambda z, fz: np.asarray(grad(z.reshape(shape)), dtype=float).ravel()
    fx = f(x)
    if not np.isfinite(fx):
        raise NumericalError("objective is not finite at the initial point")
    g = g_of(x, fx)
    step = 1.0 / max(1.0, np.linalg.norm(g))
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            return OptimizeResult(x.reshape(shape), fx, gnorm, it - 1, True)
        t = step
        while True:
            x_new = x - t * g
            f_new = f(x_new)
            if np.isfinite(f_new) and f_new <= fx - ARMIJO_C * t * gnorm**2:
                break
            t *= SHRINK
            if t * gnorm <= 1e-16 * (1.0 + np.linalg.norm(x)):
                # no representable descent step is left
                return OptimizeResult(x.reshape(shape), fx, gnorm, it, False)
        g_new = g_of(x_new, f_new)
        s, yv = x_new - x, g_new - g
        sy = float(s @ yv)
        step = float(s @ s) / sy if sy > 0 else 2.0 * t
        x, fx, g = x_new, f_new, g_new
    gnorm = np.linalg.norm(g)
    return OptimizeResult(x.reshape(shape), fx, gnorm, it, gnorm <= tol)


# --------------------------------------------------------------------------
# Linear-Gaussian inverse problems
# --------------------------------------------------------------------------

def linear_gaussian_posterior(A, Gamma, prior: Gaussian, y) -> Gaussian:
    """Posterior of u ~ prior given y = A u + N(0, Gamma), in gain form."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Gamma = as_spd(Gamma)
    C = prior.cov.array
    S = SpdMatrix(symmetrize(A @ C @ A.T + Gamma.array))
    K = S.solve(A @ C).T
    mean = prior.mean + K @ (np.atleast_1d(y) - A @ prior.mean)
    return Gaussian(mean, symmetrize(C - K @ A @ C))


# --------------------------------------------------------------------------
# 3DVAR
# --------------------------------------------------------------------------

def gain_3dvar(C_hat, H, Gamma):
    """Fixed gain K = C_hat H^T S^{-1} with S = H C_hat H^T + Gamma; returns ``(K, S)``."""
    C_hat = as_spd(C_hat).array
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Gamma = as_spd(Gamma)
    S = SpdMatrix(symmetrize(H @ C_hat @ H.T + Gamma.array))
    K = S.solve(H @ C_hat).T
    return K, S


def step_3dvar(m, y, model: NonlinearModel, K) -> np.ndarray:
    forecast = model.propagate(np.atleast_1d(m))[0]
    K = np.atleast_2d(K)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return forecast + K @ (y - model.H @ forecast)


def run_3dvar(model: NonlinearModel, K, data, m0=None) -> np.ndarray:
    """Means m_1..m_J of 3DVAR started from ``m0`` (default: the initial mean)."""
    m = model.init.mean if m0 is None else np.atleast_1d(m0)
    out = []
    for y in np.asarray(data, dtype=float).reshape(-1, model.dim_obs):
        m = step_3dvar(m, y, model, K)
        out.append(m)
    return np.array(out)


# --------------------------------------------------------------------------
# 4DVAR
# --------------------------------------------------------------------------

def _check_w4dvar(V, model, Y):
    Y = np.asarray(Y, dtype=float).reshape(-1, model.dim_obs)
    if Y.shape[0] == 0:
        raise ValueError("data nonempty required")
    V = np.asarray(V, dtype=float).reshape(Y.shape[0] + 1, model.dim_state)
    if model.Sigma is None:
        raise ValueError("w4DVAR needs a model noise covariance Sigma")
    return V, Y


def w4dvar_objective(V, model: NonlinearModel, Y) -> float:
    V, Y = _check_w4dvar(V, model, Y)
    init = model.init
    dyn = V[1:] - model.propagate(V[:-1])
    obs = Y - V[1:] @ model.H.T
    return 0.5 * (
        weighted_sq_norm(init.cov, V[0] - init.mean)
        + float(np.sum(weighted_sq_norm(model.Sigma, dyn)))
        + float(np.sum(weighted_sq_norm(model.Gamma, obs)))
    )


def w4dvar_gradient(V, model: NonlinearModel, Y) -> np.ndarray:
    """Analytic gradient; requires ``model.jacobian_psi``."""
    V, Y = _check_w4dvar(V, model, Y)
    dyn = V[1:] - model.propagate(V[:-1])
    wdyn = model.Sigma.solve(dyn.T).T
    wobs = model.Gamma.solve((Y - V[1:] @ model.H.T).T).T @ model.H
    grad = np.zeros_like(V)
    grad[0] = model.init.cov.solve(V[0] - model.init.mean)
    for j in range(V.shape[0] - 1):
        grad[j] -= model.jacobian(V[j]).T @ wdyn[j]
        grad[j + 1] += wdyn[j] - wobs[j]
    return grad


def w4dvar_minimize(model: NonlinearModel, Y, init_V=None, tol: float = 1e-8,
                    max_iter: int = 10_000):
    """Weak-constraint 4DVAR. Returns ``(V_star, objective_value, grad_norm)``."""
    Y = np.asarray(Y, dtype=float).reshape(-1, model.dim_obs)
    if Y.shape[0] == 0:
        raise ValueError("data nonempty required")
    if init_V is None:
        init_V = np.zeros((Y.shape[0] + 1, model.dim_state))
    fun = lambda V: w4dvar_objective(V, model, Y)
    grad = (lambda V: w4dvar_gradient(V, model, Y)) if model.jacobian_psi else None
    res = minimize(fun, np.asarray(init_V, dtype=float), grad, tol, max_iter)
    return res.x, res.fun, res.grad_norm


def roll_forward(model: NonlinearModel, v0, J: int) -> np.ndarray:
    traj = [np.atleast_1d(np.asarray(v0, dtype=float))]
    for _ in range(J):
        traj.append(model.propagate(traj[-1])[0])
    return np.array(traj)


def strong_4dvar_objective(v0, model: NonlinearModel, Y) -> float:
    Y = np.asarray(Y, dtype=float).reshape(-1, model.dim_obs)
    traj = roll_forward(model, v0, Y.shape[0])
    obs = Y - traj[1:] @ model.H.T
    return 0.5 * (weighted_sq_norm(model.init.cov, traj[0] - model.init.mean)
                  + float(np.sum(weighted_sq_norm(model.Gamma, obs))))


def strong_4dvar_gradient(v0, model: NonlinearModel, Y) -> np.ndarray:
    """Chain rule backwards through the trajectory (uses ``jacobian_psi``)."""
    Y = np.asarray(Y, dtype=float).reshape(-1, model.dim_obs)
    traj = roll_forward(model, v0, Y.shape[0])
    J = Y.shape[0]
    lam = np.zeros(model.dim_state)
    for j in range(J, 0, -1):
        lam = lam - model.H.T @ model.Gamma.solve(Y[j - 1] - model.H @ traj[j])
        lam = model.jacobian(traj[j - 1]).T @ lam
    return model.init.cov.solve(traj[0] - model.init.mean) + lam


def strong_4dvar_minimize(model: NonlinearModel, Y, init_v0=None, tol: float = 1e-8,
                          max_iter: int = 10_000):
    """Strong-constraint 4DVAR over v0. Returns ``(v0_star, trajectory, objective_value)``."""
    Y = np.asarray(Y, dtype=float).reshape(-1, model.dim_obs)
    if Y.shape[0] == 0:
        raise ValueError("data nonempty required")
    v0 = model.init.mean if init_v0 is None else np.atleast_1d(init_v0)
    fun = lambda v: strong_4dvar_objective(v, model, Y)
    grad = (lambda v: strong_4dvar_gradient(v, model, Y)) if model.jacobian_psi else None
    res = minimize(fun, v0, grad, tol, max_iter)
    return res.x, roll_forward(model, res.x, Y.shape[0]), res.fun


# --------------------------------------------------------------------------
# MAP
# --------------------------------------------------------------------------

def map_objective(u, problem: InverseProblem, y) -> float:
    lp = float(problem.log_prior(u))
    if lp == -np.inf:
        return np.inf
    return problem.misfit(u, y) - lp


def map_estimate(problem: InverseProblem, y, init, tol: float = 1e-8, max_iter: int = 10_000):
    """Minimize 1/2 |y - G(u)|_Gamma^2 - log_prior(u). Returns ``(u_map, objective_value)``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    fun = lambda u: map_objective(u, problem, y)
    grad = None
    if problem.jacobian is not None and problem.grad_log_prior is not None:
        def grad(u):
            r = problem.noise_cov.solve(y - np.atleast_1d(problem.forward(u)))
            return -np.atleast_2d(problem.jacobian(u)).T @ r - problem.grad_log_prior(u)
    res = minimize(fun, np.atleast_1d(np.asarray(init, dtype=float)), grad, tol, max_iter)
    return res.x, res.fun


# --------------------------------------------------------------------------
# Best Gaussian approximations
# --------------------------------------------------------------------------

def _whitened_panel(gen: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Standard normal panel shifted and rescaled to exact zero mean, identity covariance."""
    Z = gen.standard_normal((n, d))
    Z -= Z.mean(axis=0)
    L = np.linalg.cholesky(Z.T @ Z / n)
    return np.linalg.solve(L, Z.T).T


def _unpack(theta, d):
    mu = theta[:d]
    Lf = np.zeros((d, d))
    Lf[np.tril_indices(d)] = theta[d:]
    di = np.diag_indices(d)
    Lf[di] = np.exp(Lf[di])
    return mu, Lf


def _pack(mu, Lf):
    d = mu.size
    Lp = Lf.copy()
    Lp[np.diag_indices(d)] = np.log(np.diag(Lf))
    return np.concatenate([mu, Lp[np.tril_indices(d)]])


def _klpq_objective(theta, loss, lam, Z):
    d = Z.shape[1]
    mu, Lf = _unpack(theta, d)
    U = mu + Z @ Lf.T
    vals = np.asarray(loss(U), dtype=float)
    return (float(np.mean(vals)) + 0.5 * lam * float(mu @ mu)
            + 0.5 * lam * float(np.sum(Lf * Lf)) - float(np.sum(np.log(np.diag(Lf)))))


def _klpq_gradient(theta, grad_loss, lam, Z):
    n, d = Z.shape
    mu, Lf = _unpack(theta, d)
    G = np.asarray(grad_loss(mu + Z @ Lf.T), dtype=float).reshape(n, d)
    g_mu = G.mean(axis=0) + lam * mu
    g_L = G.T @ Z / n + lam * Lf
    g_L[np.diag_indices(d)] -= 1.0 / np.diag(Lf)
    # chain rule through the log-diagonal
    g_L[np.diag_indices(d)] *= np.diag(Lf)
    return np.concatenate([g_mu, g_L[np.tril_indices(d)]])


def gaussian_fit_klpq(loss, lam: float, dim: int, *, grad=None, n_starts: int = 4,
                      panel: int = 256, n_outer: int = 20, inner_iter: int = 200,
                      seed: int = 0, tol: float = 1e-8) -> Gaussian:
    """Gaussian N(mu, Sigma) minimizing KL(p || pi) for pi ~ exp(-loss) N(0, I/lam).

    Minimizes E^p loss + lam/2 |mu|^2 + lam/2 tr(Sigma) - 1/2 log det Sigma
    by reparameterized sample-average gradients. ``loss`` (and ``grad``, if
    given) act on an n x dim batch. Each outer iteration draws a fresh panel
    of standard normals, whitened to exact first and second moments, and the
    result is the average of the parameters over the second half of the
    outer iterations. Several seeded starts are run and the one with the
    lowest objective is returned; the result is a local minimizer.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    stream = RngStream(seed, "klpq")
    start_gen = stream.at(step=0).generator()
    starts = [np.zeros(dim)] + [start_gen.standard_normal(dim) / np.sqrt(lam)
                                for _ in range(n_starts - 1)]
    L0 = np.eye(dim) * min(1.0, 1.0 / np.sqrt(lam))
    eval_Z = _whitened_panel(stream.at(step=1).generator(), 16 * panel, dim)
    best = None
    for s, mu0 in enumerate(starts):
        theta = _pack(mu0, L0)
        kept = []
        for outer in range(n_outer):
            Z = _whitened_panel(stream.at(phase=f"klpq/{s}", step=outer).generator(), panel, dim)
            fun = lambda th: _klpq_objective(th, loss, lam, Z)
            g = None if grad is None else (lambda th: _klpq_gradient(th, grad, lam, Z))
            theta = minimize(fun, theta, g, tol, inner_iter).x
            if outer >= n_outer // 2:
                kept.append(theta)
        theta = np.mean(kept, axis=0)
        value = _klpq_objective(theta, loss, lam, eval_Z)
        if not np.isfinite(value):
            raise NumericalError("KL objective is not finite at the fitted Gaussian")
        if best is None or value < best[0]:
            best = (value, theta)
    mu, Lf = _unpack(best[1], dim)
    return Gaussian(mu, symmetrize(Lf @ Lf.T))


def gaussian_fit_moment_match(samples, weights=None) -> Gaussian:
    """Gaussian with the (weighted) mean and covariance of the samples."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("need at least two samples")
    w = np.full(X.shape[0], 1.0 / X.shape[0]) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    mean = w @ X
    E = X - mean
    cov = symmetrize((E * w[:, None]).T @ E)
    return Gaussian(mean, SpdMatrix(cov))
