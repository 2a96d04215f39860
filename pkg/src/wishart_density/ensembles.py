"""Variance laws, ensemble descriptions and seeded Gaussian sampling.

The sampled matrix is pre-scaled by ``1/sqrt(N)`` so that ``X @ X.T`` is the
Wishart matrix itself, with ``E[N x_{i mu} x_{j nu}] = m_ij theta_{mu nu}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import DomainError, EvaluationError, InvalidLaw

DEFAULT_NODES = 128


@lru_cache(maxsize=16)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


class HyperparameterLaw:
    """Distribution of a row variance ``s`` or column variance ``t``."""

    def quadrature(self, n_nodes: int = DEFAULT_NODES) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights (weights sum to one) realizing the bracket average."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def mean(self) -> float:
        return float(expect_law(self, lambda v: v).real)

    def scaled(self, c: float) -> "HyperparameterLaw":
        raise NotImplementedError


@dataclass(frozen=True)
class Uniform(HyperparameterLaw):
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise InvalidLaw("uniform bounds must be finite")
        if self.lo < 0:
            raise InvalidLaw(f"variances must be >= 0, got min={self.lo}")
        if not self.lo < self.hi:
            raise InvalidLaw(f"uniform law needs min < max, got ({self.lo}, {self.hi})")

    def quadrature(self, n_nodes=DEFAULT_NODES):
        x, w = _gauss_legendre(n_nodes)
        half = 0.5 * (self.hi - self.lo)
        return 0.5 * (self.hi + self.lo) + half * x, 0.5 * w

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)

    @property
    def support(self):
        return (self.lo, self.hi)

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def scaled(self, c):
        return Uniform(c * self.lo, c * self.hi)


@dataclass(frozen=True)
class Constant(HyperparameterLaw):
    value: float

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value >= 0):
            raise InvalidLaw(f"constant variance must be finite and >= 0, got {self.value}")

    def quadrature(self, n_nodes=DEFAULT_NODES):
        return np.array([float(self.value)]), np.array([1.0])

    def sample(self, rng, size):
        return np.full(size, float(self.value))

    @property
    def support(self):
        return (self.value, self.value)

    def mean(self):
        return float(self.value)

    def scaled(self, c):
        return Constant(c * self.value)


@dataclass(frozen=True)
class Discrete(HyperparameterLaw):
    """Equally weighted atoms."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in np.atleast_1d(self.values))
        if not vals:
            raise InvalidLaw("discrete law needs at least one value")
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise InvalidLaw("discrete variances must be finite and >= 0")
        object.__setattr__(self, "values", vals)

    def quadrature(self, n_nodes=DEFAULT_NODES):
        v = np.asarray(self.values)
        return v, np.full(v.size, 1.0 / v.size)

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.values), size=size)

    @property
    def support(self):
        return (min(self.values), max(self.values))

    def scaled(self, c):
        return Discrete(tuple(c * v for v in self.values))


UNIT = Constant(1.0)


def expect_law(law: HyperparameterLaw, f: Callable, n_nodes: int = DEFAULT_NODES) -> complex:
    """Bracket average of ``f`` over ``law``.

    ``f`` is called once on the array of quadrature nodes and must be
    vectorized. Uniform laws use Gauss-Legendre with ``n_nodes`` nodes.
    """
    nodes, weights = law.quadrature(n_nodes)
    vals = np.asarray(f(nodes), dtype=complex)
    if vals.shape != nodes.shape:
        vals = np.broadcast_to(vals, nodes.shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        raise EvaluationError(float(nodes[np.argmax(bad)]))
    out = complex(np.sum(weights * vals))
    return out


ROW = "row"            # case 1: E[x x] = s_i delta delta
COLUMN = "column"      # case 2: E[x x] = t_mu delta delta
KRONECKER = "kronecker"  # case 3: E[x x] = m_ij theta_{mu nu}
STRUCTURES = (ROW, COLUMN, KRONECKER)


@dataclass(frozen=True)
class EnsembleSpec:
    alpha: float
    structure: str
    law_s: HyperparameterLaw = UNIT
    law_t: HyperparameterLaw = UNIT
    rotate_rows: bool = False
    rotate_cols: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError(f"alpha must be > 0, got {self.alpha}")
        if self.structure not in STRUCTURES:
            raise DomainError(f"unknown structure {self.structure!r}")
        if self.structure != KRONECKER and (self.rotate_rows or self.rotate_cols):
            raise DomainError("rotations are only defined for the Kronecker structure")
        if self.structure == ROW and self.law_t != UNIT:
            raise DomainError("row-variance ensembles carry no column law")
        if self.structure == COLUMN and self.law_s != UNIT:
            raise DomainError("column-variance ensembles carry no row law")

    @classmethod
    def row_variance(cls, alpha, law_s):
        return cls(alpha, ROW, law_s=law_s)

    @classmethod
    def column_variance(cls, alpha, law_t):
        return cls(alpha, COLUMN, law_t=law_t)

    @classmethod
    def kronecker(cls, alpha, law_s, law_t, rotate_rows=False, rotate_cols=False):
        return cls(alpha, KRONECKER, law_s, law_t, rotate_rows, rotate_cols)

    @classmethod
    def marchenko_pastur(cls, alpha, v):
        return cls.row_variance(alpha, Constant(v))

    @property
    def v(self) -> float:
        """Mean entry variance ``<s><t>``."""
        return self.law_s.mean() * self.law_t.mean()

    def realized_alpha(self, n: int) -> float:
        return n_columns(self.alpha, n) / n


def n_columns(alpha: float, n: int) -> int:
    return int(round(alpha * n))


def haar_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian square with sign-fixed R diagonal."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class CovarianceFactors:
    """``M = W diag(s) W^T`` and ``Theta = U diag(t) U^T``; ``W``/``U`` are None for identity."""

    s_draws: np.ndarray
    t_draws: np.ndarray
    W: np.ndarray | None = None
    U: np.ndarray | None = None

    @property
    def M(self) -> np.ndarray:
        return _compose(self.W, self.s_draws)

    @property
    def theta(self) -> np.ndarray:
        return _compose(self.U, self.t_draws)

    @property
    def m_diag(self) -> np.ndarray:
        return _compose_diag(self.W, self.s_draws)

    @property
    def theta_diag(self) -> np.ndarray:
        return _compose_diag(self.U, self.t_draws)


def _compose(rot, d):
    if rot is None:
        return np.diag(d)
    out = (rot * d) @ rot.T
    return 0.5 * (out + out.T)


def _compose_diag(rot, d):
    if rot is None:
        return d.copy()
    return np.einsum("ij,j,ij->i", rot, d, rot)


def _factors(spec: EnsembleSpec, n: int, rng: np.random.Generator) -> CovarianceFactors:
    if n < 2:
        raise DomainError("N must be >= 2")
    p = n_columns(spec.alpha, n)
    if p < 1:
        raise DomainError(f"alpha*N rounds to p={p} < 1")
    s = spec.law_s.sample(rng, n)
    t = spec.law_t.sample(rng, p)
    W = haar_orthogonal(rng, n) if spec.rotate_rows else None
    U = haar_orthogonal(rng, p) if spec.rotate_cols else None
    return CovarianceFactors(np.asarray(s, float), np.asarray(t, float), W, U)


def build_covariance_factors(spec: EnsembleSpec, n: int, seed: int) -> CovarianceFactors:
    """Draw ``s``, ``t`` and the optional rotations for an ``N``-row instance."""
    return _factors(spec, n, np.random.default_rng(seed))


@dataclass
class SampledEnsemble:
    matrix: np.ndarray
    factors: CovarianceFactors
    seed: int | None = None
    spec: EnsembleSpec | None = None

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def alpha(self) -> float:
        """Realized aspect ratio ``p / N``."""
        return self.n_cols / self.n_rows

    @property
    def M(self):
        return self.factors.M

    @property
    def theta(self):
        return self.factors.theta

    def wishart(self) -> np.ndarray:
        w = self.matrix @ self.matrix.T
        return 0.5 * (w + w.T)


def _sqrt_apply_rows(rot, d, g):
    # (rot diag(sqrt d) rot^T) @ g
    r = np.sqrt(d)
    if rot is None:
        return r[:, None] * g
    return rot @ (r[:, None] * (rot.T @ g))


def sample_matrix(spec: EnsembleSpec, n: int, seed: int) -> SampledEnsemble:
    """Gaussian ``N x p`` matrix ``N^{-1/2} M^{1/2} G Theta^{1/2}`` from one seeded stream."""
    rng = np.random.default_rng(seed)
    f = _factors(spec, n, rng)
    return SampledEnsemble(draw_matrix(f, rng), f, seed, spec)


def draw_matrix(factors: CovarianceFactors, rng: np.random.Generator) -> np.ndarray:
    """One Gaussian draw ``N^{-1/2} M^{1/2} G Theta^{1/2}`` for fixed covariance factors."""
    f = factors
    if np.any(f.s_draws < 0) or np.any(f.t_draws < 0):
        raise InvalidLaw("negative variance draw; cannot take a square root")
    n = f.s_draws.size
    g = rng.standard_normal((n, f.t_draws.size))
    x = _sqrt_apply_rows(f.W, f.s_draws, g)
    x = _sqrt_apply_rows(f.U, f.t_draws, x.T).T
    x /= np.sqrt(n)
    return np.ascontiguousarray(x)
