"""Monte Carlo and importance-sampling estimators, plus resampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import RngStream, WeightCollapseError, as_generator


@dataclass(frozen=True)
class WeightedEnsemble:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.particles, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        w = np.asarray(self.weights, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("particles must be an N x d matrix with N >= 1")
        if w.shape != (x.shape[0],):
            raise ValueError("need one weight per particle")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "particles", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, particles) -> "WeightedEnsemble":
        x = np.asarray(particles, dtype=float)
        n = x.shape[0]
        return cls(x, np.full(n, 1.0 / n))

    @classmethod
    def from_log_weights(cls, particles, log_w) -> "WeightedEnsemble":
        return cls(particles, normalize_log_weights(log_w))

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def cov(self) -> np.ndarray:
        e = self.particles - self.mean()
        return (e * self.weights[:, None]).T @ e


def normalize_log_weights(log_w) -> np.ndarray:
    """Normalized weights from log-weights via log-sum-exp."""
    log_w = np.asarray(log_w, dtype=float)
    top = np.max(log_w)
    if not np.isfinite(top):
        raise WeightCollapseError(f"all weights vanish (max log-weight {top})")
    w = np.exp(log_w - logsumexp(log_w))
    return w / math.fsum(w)


def monte_carlo_estimate(f, samples) -> float:
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    return math.fsum(f(u) for u in samples) / samples.shape[0]


def importance_estimate(f, samples, g):
    """Self-normalized importance sampling.

    Returns ``(estimate, weights, zeta_hat)``. ``zeta_hat`` is the plug-in
    estimate N sum g^2 / (sum g)^2 of rho(g^2)/rho(g)^2, biased at O(1/N).
    """
    samples = np.asarray(samples, dtype=float)
    gv = np.array([g(u) for u in samples], dtype=float)
    if np.any(gv < 0) or not np.all(np.isfinite(gv)):
        raise ValueError("g must be finite and nonnegative on the samples")
    total = math.fsum(gv)
    if total <= 0:
        raise WeightCollapseError("degenerate proposal: all weights are zero")
    w = gv / total
    fv = np.array([f(u) for u in samples], dtype=float)
    estimate = math.fsum(w * fv)
    zeta_hat = samples.shape[0] * math.fsum(gv * gv) / total**2
    return estimate, w, zeta_hat


def cumulative_weights(weights) -> np.ndarray:
    """alpha^(m) = w^(1) + ... + w^(m), compensated, with alpha^(N) forced to 1."""
    w = np.asarray(weights, dtype=float)
    alpha = np.empty_like(w)
    s = c = 0.0
    for i, wi in enumerate(w):
        # Kahan summation
        yk = wi - c
        t = s + yk
        c = (t - s) - yk
        s = t
        alpha[i] = s
    alpha[-1] = 1.0
    return alpha


def resample_indices(weights, uniforms) -> np.ndarray:
    """Index m with r in [alpha^(m-1), alpha^(m)) for each uniform r."""
    alpha = cumulative_weights(weights)
    idx = np.searchsorted(alpha, np.asarray(uniforms, dtype=float), side="right")
    return np.minimum(idx, alpha.size - 1)


def resample(ensemble: WeightedEnsemble, uniforms) -> WeightedEnsemble:
    u = np.asarray(uniforms, dtype=float)
    if u.shape != (ensemble.size,) or np.any(u < 0) or np.any(u >= 1):
        raise ValueError("need one uniform in [0, 1) per particle")
    idx = resample_indices(ensemble.weights, u)
    return WeightedEnsemble.uniform(ensemble.particles[idx])


def multinomial_uniforms(n: int, rng) -> np.ndarray:
    if isinstance(rng, RngStream):
        return rng.particle_uniforms(n, 1)[:, 0]
    return as_generator(rng).random(n)


def stratified_uniforms(n: int, rng) -> np.ndarray:
    """(n - 1 + u_n) / N; lower-variance alternative, never used by the oracles."""
    return (np.arange(n) + multinomial_uniforms(n, rng)) / n
