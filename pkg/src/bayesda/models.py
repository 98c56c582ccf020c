"""Named test problems, synthetic twin data and the Euler-discretized ODE forward map."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Gaussian, NumericalError, RngStream, as_generator, ensemble_normals, sample_gaussian
from .kalman import LinearModel
from .variational import InverseProblem, NonlinearModel

# Gain used with "contractive-3dvar"; |(1 - K) * 0.9| = 0.45 < 1.
CONTRACTIVE_GAIN = 0.5

VECTOR_LG_M = np.array([
    [0.9, 0.1, 0.0, 0.0],
    [0.0, 0.8, 0.2, 0.0],
    [0.0, 0.0, 0.7, 0.1],
    [0.1, 0.0, 0.0, 0.9],
])
VECTOR_LG_H = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
])


@dataclass(frozen=True)
class OdeForwardModel:
    """dx/dt = F(x, u) on [0, 1] from x(0) = 0, discretized with L Euler steps."""

    F: Callable
    L: int
    dim_x: int = 1
    dim_u: int = 1
    exact: Callable | None = None

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")

    def forward(self, u) -> np.ndarray:
        return euler_forward(self, u)

    def forward_batch(self, U) -> np.ndarray:
        """Forward map of every row of U; F must broadcast over rows."""
        return euler_forward_batch(self, U)

    def inverse_problem(self, prior: Gaussian, noise_cov) -> InverseProblem:
        return InverseProblem.gaussian(self.forward, prior, noise_cov)


def euler_forward(model: OdeForwardModel, u, L_override: int | None = None) -> np.ndarray:
    """X_L of X_{l+1} = X_l + delta F(X_l; u), X_0 = 0, delta = 1/L."""
    L = model.L if L_override is None else L_override
    if L < 1:
        raise ValueError("L must be >= 1")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    delta = 1.0 / L
    x = np.zeros(model.dim_x)
    for _ in range(L):
        x = x + delta * np.atleast_1d(model.F(x, u))
    if not np.all(np.isfinite(x)):
        raise NumericalError("Euler iteration produced a non-finite state")
    return x


def euler_forward_batch(model: OdeForwardModel, U, L_override: int | None = None) -> np.ndarray:
    """Row-wise ``euler_forward`` for an n x dim_u batch in one sweep."""
    L = model.L if L_override is None else L_override
    if L < 1:
        raise ValueError("L must be >= 1")
    U = np.asarray(U, dtype=float).reshape(-1, model.dim_u)
    delta = 1.0 / L
    X = np.zeros((U.shape[0], model.dim_x))
    for _ in range(L):
        X = X + delta * np.asarray(model.F(X, U), dtype=float).reshape(X.shape)
    if not np.all(np.isfinite(X)):
        raise NumericalError("Euler iteration produced a non-finite state")
    return X


@dataclass(frozen=True)
class SyntheticRun:
    truth: np.ndarray  # (J + 1) x d
    data: np.ndarray  # J x k
    seed: int | None


def _rows(rng, phase: str, step: int, d: int) -> np.ndarray:
    if isinstance(rng, RngStream):
        return rng.at(phase=phase, step=step).particle_normals(1, d)[0]
    return ensemble_normals(rng, 1, d)[0]


def simulate(model, J: int, rng, noise_free_dynamics: bool = False) -> SyntheticRun:
    """Truth v_0..v_J from the model dynamics and data y_1..y_J = H v_j + eta_j."""
    if J < 1:
        raise ValueError("J must be >= 1")
    seed = rng.seed if isinstance(rng, RngStream) else None
    if not isinstance(rng, RngStream):
        rng = as_generator(rng)
    d, k = model.dim_state, model.dim_obs
    init_rng = rng.at(phase="sim-init", step=0) if isinstance(rng, RngStream) else rng
    truth = np.empty((J + 1, d))
    data = np.empty((J, k))
    truth[0] = sample_gaussian(model.init, init_rng, 1)[0]
    for j in range(1, J + 1):
        v = model.propagate(truth[j - 1])[0]
        if not noise_free_dynamics and model.Sigma is not None:
            v = v + model.Sigma.chol @ _rows(rng, "sim-dynamics", j, d)
        truth[j] = v
        data[j - 1] = model.observe(v)[0] + model.Gamma.chol @ _rows(rng, "sim-observe", j, k)
    if not (np.all(np.isfinite(truth)) and np.all(np.isfinite(data))):
        raise NumericalError("simulated trajectory is not finite")
    return SyntheticRun(truth, data, seed)


def _scalar_lg(**_):
    return LinearModel(M=[[1.0]], H=[[1.0]], Sigma=[[1.0]], Gamma=[[1.0]],
                       init=Gaussian([0.0], [[1.0]]))


def _vector_lg(**_):
    return LinearModel(M=VECTOR_LG_M, H=VECTOR_LG_H, Sigma=0.1 * np.eye(4),
                       Gamma=0.05 * np.eye(2), init=Gaussian(np.zeros(4), np.eye(4)))


def _contractive(gamma: float = 0.1, **_):
    return NonlinearModel(
        psi=lambda v: 0.9 * np.sin(v),
        H=[[1.0]],
        Sigma=None,
        Gamma=[[gamma**2]],
        init=Gaussian([0.5], [[1.0]]),
        jacobian_psi=lambda v: np.atleast_2d(0.9 * np.cos(v)),
        vectorized=True,
    )


def _logistic(**_):
    return NonlinearModel(
        psi=lambda v: 2.5 * v * (1.0 - v),
        H=[[1.0]],
        Sigma=[[0.01**2]],
        Gamma=[[0.05**2]],
        init=Gaussian([0.5], [[0.01]]),
        jacobian_psi=lambda v: np.atleast_2d(2.5 * (1.0 - 2.0 * np.asarray(v))),
        vectorized=True,
    )


def _ode_inverse(L: int = 32, **_):
    return OdeForwardModel(
        F=lambda x, u: -x + u,
        L=L,
        exact=lambda u: np.atleast_1d(u) * (1.0 - np.exp(-1.0)),
    )


BENCHMARKS = {
    "scalar-lg": _scalar_lg,
    "vector-lg-d4k2": _vector_lg,
    "contractive-3dvar": _contractive,
    "logistic-nl": _logistic,
    "ode-inverse": _ode_inverse,
}


def make_benchmark(name: str, **params):
    """Fixed-coefficient test problem by name.

    ``contractive-3dvar`` accepts ``gamma`` (observation noise s.d.) and
    ``ode-inverse`` accepts ``L``; other parameters are ignored.
    """
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; valid names: {', '.join(BENCHMARKS)}") from None
    return factory(**params)
