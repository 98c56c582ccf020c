"""Distances and divergences between probability densities.

Discrete distributions use exact sums. One-dimensional densities live on a
uniform grid and are integrated with the trapezoid rule.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DimensionError, Gaussian, as_generator, weighted_sq_norm

MIN_GRID_POINTS = 2048
Q_FLOOR = 1e-300
P_FLOOR = 1e-12


@dataclass(frozen=True)
class DiscreteDist:
    probs: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probs must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def normalized(cls, weights) -> "DiscreteDist":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    def expect(self, f) -> float:
        return float(self.probs @ np.asarray(f, dtype=float))


@dataclass(frozen=True)
class GridDensity1D:
    """Density sampled on ``len(values)`` equally spaced points spanning [lo, hi].

    Values are renormalized on construction so the trapezoid integral is 1.
    """

    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("need lo < hi")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < MIN_GRID_POINTS:
            raise ValueError(f"need at least {MIN_GRID_POINTS} grid values")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and nonnegative")
        mass = np.trapezoid(v, dx=(self.hi - self.lo) / (v.size - 1))
        if mass <= 0:
            raise ValueError("density has zero mass")
        object.__setattr__(self, "values", v / mass)

    @classmethod
    def from_pdf(cls, pdf, lo: float, hi: float, n: int = 4097) -> "GridDensity1D":
        x = np.linspace(lo, hi, n)
        return cls(lo, hi, pdf(x))

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.values.size)

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / (self.values.size - 1)

    def integrate(self, y) -> float:
        return float(np.trapezoid(y, dx=self.dx))

    def expect(self, f) -> float:
        return self.integrate(f(self.grid) * self.values)


def _pair(p, q):
    """Return (p values, q values, integrator) for two compatible densities."""
    if isinstance(p, DiscreteDist) and isinstance(q, DiscreteDist):
        if p.probs.shape != q.probs.shape:
            raise DimensionError("discrete distributions on different supports")
        return p.probs, q.probs, np.sum
    if isinstance(p, GridDensity1D) and isinstance(q, GridDensity1D):
        if (p.lo, p.hi, p.values.size) != (q.lo, q.hi, q.values.size):
            raise DimensionError("grid densities on different grids")
        return p.values, q.values, p.integrate
    raise TypeError("expected two DiscreteDist or two GridDensity1D")


def _check_support(p, q):
    if np.any((q < Q_FLOOR) & (p > P_FLOOR)):
        raise ValueError("support violation: q vanishes where p is positive")


def tv_distance(p, q) -> float:
    a, b, integ = _pair(p, q)
    return float(0.5 * integ(np.abs(a - b)))


def hellinger_distance(p, q) -> float:
    a, b, integ = _pair(p, q)
    h2 = 0.5 * integ((np.sqrt(a) - np.sqrt(b)) ** 2)
    return float(np.sqrt(max(h2, 0.0)))


def kl_divergence(p, q) -> float:
    """KL(p || q) = int p log(p / q)."""
    a, b, integ = _pair(p, q)
    _check_support(a, b)
    mask = a > 0
    terms = np.zeros_like(a)
    terms[mask] = a[mask] * (np.log(a[mask]) - np.log(b[mask]))
    return float(max(integ(terms), 0.0))


def chi2_divergence(p, q) -> float:
    """chi^2(p || q) = int (p/q - 1)^2 q."""
    a, b, integ = _pair(p, q)
    _check_support(a, b)
    mask = b > 0
    terms = np.zeros_like(a)
    terms[mask] = (a[mask] - b[mask]) ** 2 / b[mask]
    return float(integ(terms))


def kl_gaussian(p: Gaussian, q: Gaussian) -> float:
    """Closed-form KL(p || q) between two Gaussians."""
    if p.dim != q.dim:
        raise DimensionError("Gaussians of different dimension")
    trace = float(np.trace(q.cov.solve(p.cov.array)))
    quad = weighted_sq_norm(q.cov, q.mean - p.mean)
    return 0.5 * (trace + quad - p.dim + q.cov.logdet() - p.cov.logdet())


def sign_dictionary(n_atoms: int, n_random: int = 256, rng=0) -> list[np.ndarray]:
    """All +-1 vectors for up to 12 atoms, otherwise ``n_random`` random ones."""
    if n_atoms <= 12:
        return [np.array(s, dtype=float) for s in itertools.product((-1.0, 1.0), repeat=n_atoms)]
    gen = as_generator(rng)
    return list(gen.choice([-1.0, 1.0], size=(n_random, n_atoms)))


def random_measure_distance(
    reps_p: Sequence[DiscreteDist],
    reps_q: Sequence[DiscreteDist],
    dictionary: Sequence[np.ndarray] | None = None,
) -> float:
    """Lower bound on sup_f E[(p(f) - q(f))^2]^{1/2} over a finite test-function set.

    ``reps_p[r]`` and ``reps_q[r]`` are paired replicates of two random
    measures on a shared atom set; the expectation is the replicate average.
    Each dictionary entry holds the values of a test function on the atoms.
    """
    if len(reps_p) != len(reps_q) or not reps_p:
        raise ValueError("need equally many (>= 1) replicates of each measure")
    P = np.stack([r.probs for r in reps_p])
    Q = np.stack([r.probs for r in reps_q])
    if P.shape != Q.shape:
        raise DimensionError("replicates live on different atom sets")
    if dictionary is None:
        dictionary = sign_dictionary(P.shape[1])
    if len(dictionary) == 0:
        raise ValueError("empty test-function dictionary")
    F = np.stack([np.asarray(f, dtype=float) for f in dictionary])
    if F.shape[1] != P.shape[1]:
        raise DimensionError("test functions must be given on every atom")
    if np.any(np.abs(F) > 1.0):
        raise ValueError("test functions must satisfy |f| <= 1")
    gaps = (P - Q) @ F.T
    return float(np.sqrt(np.mean(gaps**2, axis=0)).max())
