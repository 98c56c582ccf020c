"""Linear-algebra and probability primitives shared by every estimator.

Everything that needs a covariance goes through :class:`SpdMatrix`, which
owns a Cholesky factor; no routine in the package forms an explicit inverse.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla
from scipy.special import ndtri

SYMMETRY_RTOL = 1e-10
PIVOT_RTOL = 1e-12


class DimensionError(ValueError):
    """Shapes of the arguments do not agree."""


class NumericalError(ArithmeticError):
    """Base class for failures of the numerics (exit code 2 in the CLI)."""


class NotSPDError(NumericalError):
    """A matrix expected to be symmetric positive definite is not."""


class WeightCollapseError(NumericalError):
    """Every importance weight underflowed to zero."""


class ConvergenceError(NumericalError):
    """An iterative procedure did not reach its tolerance."""


def _cholesky(a: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError("matrix is not positive definite") from exc
    diag = np.diag(a)
    pivots = np.diag(chol) ** 2
    if not np.all(np.isfinite(chol)) or pivots.min() < PIVOT_RTOL * diag.max():
        raise NotSPDError(
            f"smallest Cholesky pivot {pivots.min():.3e} below "
            f"{PIVOT_RTOL:g} x largest diagonal entry {diag.max():.3e}"
        )
    return chol


class SpdMatrix:
    """Symmetric positive-definite matrix with a cached lower Cholesky factor.

    The input is symmetrized on construction; asymmetry beyond
    ``SYMMETRY_RTOL`` (relative to the largest entry) is rejected.
    """

    __slots__ = ("array", "chol")

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {a.shape}")
        scale = np.max(np.abs(a)) if a.size else 0.0
        if not np.all(np.isfinite(a)):
            raise NotSPDError("matrix has non-finite entries")
        if scale == 0.0:
            raise NotSPDError("zero matrix is not positive definite")
        if np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * scale:
            raise NotSPDError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        self.array = a
        self.chol = _cholesky(a)
        self.chol.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.array.shape[0]

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.dim:
            raise DimensionError(f"rhs has {b.shape[0]} rows, matrix side is {self.dim}")
        return sla.cho_solve((self.chol, True), b)

    def whiten(self, v) -> np.ndarray:
        """Return L^{-1} v (columns) so that |v|_A^2 = |L^{-1} v|^2."""
        return sla.solve_triangular(self.chol, v, lower=True)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))

    def __array__(self, dtype=None, copy=None):
        return self.array if dtype is None else self.array.astype(dtype)

    def __repr__(self) -> str:
        return f"SpdMatrix({self.array.tolist()!r})"


def as_spd(a) -> SpdMatrix:
    return a if isinstance(a, SpdMatrix) else SpdMatrix(a)


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: SpdMatrix

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1:
            raise DimensionError("mean must be a vector")
        cov = as_spd(self.cov)
        if cov.dim != mean.shape[0]:
            raise DimensionError(f"mean has dimension {mean.shape[0]}, covariance side {cov.dim}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def weighted_sq_norm(A, v) -> float | np.ndarray:
    """|v|_A^2 = v^T A^{-1} v. Rows of a 2-D ``v`` are treated as separate vectors."""
    A = as_spd(A)
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != A.dim:
        raise DimensionError(f"vector dimension {v.shape[-1]} != matrix side {A.dim}")
    w = A.whiten(v.T)
    return np.sum(w * w, axis=0) if v.ndim == 2 else float(w @ w)


def gaussian_logpdf(g: Gaussian, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.dim:
        raise DimensionError(f"point dimension {x.shape[-1]} != Gaussian dimension {g.dim}")
    quad = weighted_sq_norm(g.cov, x - g.mean)
    return -0.5 * quad - 0.5 * g.dim * np.log(2 * np.pi) - 0.5 * g.cov.logdet()


def spd_solve(A, B) -> np.ndarray:
    return as_spd(A).solve(B)


# --------------------------------------------------------------------------
# Random streams
# --------------------------------------------------------------------------

def _phase_code(phase: str) -> int:
    return zlib.crc32(phase.encode())


_NORMAL, _UNIFORM = 1, 2


@dataclass(frozen=True)
class RngStream:
    """Seed plus a ``(phase, step, particle)`` stream id.

    ``generator()`` gives an independent numpy Generator per id. The
    ``particle_*`` methods draw for a whole ensemble at once: row ``n`` is a
    fixed slot of a counter-based (Philox) stream keyed by
    ``(seed, phase, step)``, so it depends only on ``n`` and never on the
    order in which particles are processed or on the ensemble size.
    """

    seed: int
    phase: str = "main"
    step: int = 0
    particle: int | None = None

    def at(self, phase: str | None = None, step: int | None = None,
           particle: int | None = None) -> "RngStream":
        return replace(
            self,
            phase=self.phase if phase is None else phase,
            step=self.step if step is None else step,
            particle=particle,
        )

    def _seed_sequence(self, *extra: int) -> np.random.SeedSequence:
        pid = 0 if self.particle is None else self.particle + 1
        return np.random.SeedSequence(
            self.seed & (2**64 - 1),
            spawn_key=(_phase_code(self.phase), self.step, pid, *extra),
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._seed_sequence()))

    def _raw(self, kind: int, n: int, k: int) -> np.ndarray:
        key = self._seed_sequence(kind).generate_state(2, np.uint64)
        bitgen = np.random.Philox(key=key)
        return bitgen.random_raw(n * k).reshape(n, k)

    def particle_uniforms(self, n: int, k: int = 1) -> np.ndarray:
        """n x k uniforms in the open interval (0, 1)."""
        raw = self._raw(_UNIFORM, n, k)
        return ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53

    def particle_normals(self, n: int, k: int) -> np.ndarray:
        """n x k standard normals by inverse CDF of slot uniforms."""
        raw = self._raw(_NORMAL, n, k)
        return ndtri(((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot make a Generator from {type(rng).__name__}")


def ensemble_normals(rng, n: int, d: int) -> np.ndarray:
    """n x d standard normals; per-particle slots when ``rng`` is an RngStream."""
    if isinstance(rng, RngStream):
        return rng.particle_normals(n, d)
    return as_generator(rng).standard_normal((n, d))


def sample_gaussian(g: Gaussian, rng, n: int) -> np.ndarray:
    """n x d matrix of i.i.d. draws m + L z."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = ensemble_normals(rng, n, g.dim)
    return g.mean + z @ g.cov.chol.T
