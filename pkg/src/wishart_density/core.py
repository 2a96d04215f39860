"""Numeric substrate: spectral points, grids, density curves and the fixed-point driver.

Sign convention: every resolvent in this package is evaluated at ``lam + 1j*epsilon``
with ``epsilon > 0`` (retarded branch), so densities are ``-Im(chi_w) / pi >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DomainError, InsufficientGrid, NonFiniteIterate

DENSITY_ROUNDOFF = 1e-8
METHODS = ("replica", "bp", "exact", "mp", "trace_form")


@dataclass(frozen=True)
class SpectralPoint:
    lam: float
    epsilon: float = 1e-6

    def __post_init__(self):
        if not np.isfinite(self.lam):
            raise DomainError(f"lambda must be finite, got {self.lam}")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be strictly positive, got {self.epsilon}")

    @property
    def z(self) -> complex:
        return complex(self.lam, self.epsilon)

    def with_epsilon(self, epsilon: float) -> "SpectralPoint":
        return SpectralPoint(self.lam, epsilon)


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls for every fixed-point engine.

    ``anderson_depth`` > 0 switches on Anderson mixing once the residual drops
    below ``anderson_start``; plain damped iteration is used before that and
    whenever ``anderson_depth == 0``.
    """

    damping: float = 0.5
    tolerance: float = 1e-12
    max_iterations: int = 100_000
    warm_start: bool = True
    anderson_depth: int = 3
    anderson_start: float = 1e-2

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise DomainError(f"damping must lie in (0, 1], got {self.damping}")
        if not 0 < self.tolerance < 1:
            raise DomainError(f"tolerance must lie in (0, 1), got {self.tolerance}")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.anderson_depth < 0:
            raise DomainError("anderson_depth must be >= 0")

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


DEFAULT_SOLVER = SolverConfig()


@dataclass(frozen=True)
class LambdaGrid:
    """Evaluation abscissae, stored ascending, with one shared regularizer."""

    lambdas: np.ndarray
    epsilon: float = 1e-6
    descending_sweep: bool = True

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).ravel()
        if lam.size == 0:
            raise DomainError("grid needs at least one point")
        if lam.size > 1:
            d = np.diff(lam)
            if np.all(d < 0):
                lam = lam[::-1]
            elif not np.all(d > 0):
                raise DomainError("grid lambdas must be strictly monotone")
        if not self.epsilon > 0:
            raise DomainError("grid epsilon must be strictly positive")
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @classmethod
    def linspace(cls, lam_min, lam_max, n_points, epsilon=1e-6, descending_sweep=True):
        if not lam_min < lam_max:
            raise DomainError("lambda_min must be smaller than lambda_max")
        return cls(np.linspace(lam_min, lam_max, int(n_points)), epsilon, descending_sweep)

    def __len__(self):
        return self.lambdas.size

    @property
    def points(self) -> list[SpectralPoint]:
        return [SpectralPoint(float(x), self.epsilon) for x in self.lambdas]

    def sweep_order(self) -> np.ndarray:
        """Indices into ``lambdas`` in the order a warm-started sweep visits them."""
        idx = np.arange(self.lambdas.size)
        return idx[::-1] if self.descending_sweep else idx


@dataclass
class DensityCurve:
    """Sampled density with per-point diagnostics.

    Non-converged entries carry ``rho = nan`` and are ignored by integrals.
    """

    lambdas: np.ndarray
    rho: np.ndarray
    chi_w: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    method: str
    ensemble: object = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        n = self.lambdas.size
        self.rho = np.asarray(self.rho, dtype=float).reshape(n)
        self.chi_w = np.asarray(self.chi_w, dtype=complex).reshape(n)
        self.iterations = np.asarray(self.iterations, dtype=int).reshape(n)
        self.converged = np.asarray(self.converged, dtype=bool).reshape(n)
        if self.method not in METHODS:
            raise DomainError(f"unknown method tag {self.method!r}")
        self.rho[~self.converged] = np.nan
        bad = self.converged & (self.rho < -DENSITY_ROUNDOFF)
        if bad.any():
            raise DomainError(
                f"negative density {self.rho[bad].min():.3e} at a converged point"
            )

    def __len__(self):
        return self.lambdas.size

    @property
    def n_converged(self) -> int:
        return int(self.converged.sum())

    def valid(self) -> tuple[np.ndarray, np.ndarray]:
        """Converged ``(lambdas, rho)`` pairs."""
        m = self.converged & np.isfinite(self.rho)
        return self.lambdas[m], self.rho[m]

    def mass(self) -> float:
        return trapezoid_integrate(self)

    def moment(self, k: float) -> float:
        return trapezoid_integrate(self, lambda x: x**k)


@dataclass
class FixedPointResult:
    solution: np.ndarray | complex
    iterations: int
    converged: bool
    residual: float


class AndersonMixer:
    """Column-wise type-II Anderson mixing for iterates of shape ``(n, L)``.

    Each of the ``L`` columns is an independent fixed-point problem sharing the
    same map evaluation; histories are kept per column.
    """

    def __init__(self, depth: int, damping: float):
        self.depth = depth
        self.damping = damping
        self._x: list[np.ndarray] = []
        self._g: list[np.ndarray] = []

    def reset(self):
        self._x.clear()
        self._g.clear()

    def keep(self, mask: np.ndarray):
        self._x = [h[:, mask] for h in self._x]
        self._g = [h[:, mask] for h in self._g]

    def push(self, x: np.ndarray, g: np.ndarray):
        self._x.append(x)
        self._g.append(g)
        if len(self._x) > self.depth + 1:
            del self._x[0], self._g[0]

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        self.push(x, g)
        if len(self._x) < 2:
            return x + self.damping * g
        dg = np.stack([b - a for a, b in zip(self._g, self._g[1:])], axis=-1)
        dx = np.stack([b - a for a, b in zip(self._x, self._x[1:])], axis=-1)
        gram = np.einsum("nlk,nlj->lkj", dg.conj(), dg)
        rhs = np.einsum("nlk,nl->lk", dg.conj(), g)
        k = gram.shape[-1]
        ridge = 1e-12 * np.trace(gram, axis1=1, axis2=2).real + 1e-300
        gram = gram + ridge[:, None, None] * np.eye(k)
        gamma = np.linalg.solve(gram, rhs[..., None])[..., 0]
        return x + self.damping * g - np.einsum("nlk,lk->nl", dx + self.damping * dg, gamma)


def damped_fixed_point(
    func: Callable[[np.ndarray], np.ndarray],
    init,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> FixedPointResult:
    """Solve ``x = func(x)`` for a complex scalar or small complex vector.

    Converged means ``max |func(x) - x| <= cfg.tolerance``; the returned
    solution is then ``func(x)``. On budget exhaustion the iterate with the
    smallest residual is returned with ``converged=False``.
    """
    x0 = np.asarray(init, dtype=complex)
    scalar = x0.ndim == 0
    shape = x0.shape
    x = x0.reshape(-1, 1).copy()
    mixer = AndersonMixer(cfg.anderson_depth, cfg.damping) if cfg.anderson_depth else None

    def evaluate(v):
        out = func(v.reshape(shape)[()] if scalar else v.reshape(shape))
        return np.asarray(out, dtype=complex).reshape(-1, 1)

    best, best_res = x, np.inf
    for it in range(1, cfg.max_iterations + 1):
        fx = evaluate(x)
        if not np.all(np.isfinite(fx)):
            raise NonFiniteIterate(it)
        g = fx - x
        res = float(np.max(np.abs(g)))
        if res < best_res:
            best, best_res = fx, res
        if res <= cfg.tolerance:
            return FixedPointResult(_unshape(fx, shape, scalar), it, True, res)
        if mixer is not None and res < cfg.anderson_start:
            x = mixer.step(x, g)
        else:
            x = x + cfg.damping * g
    return FixedPointResult(_unshape(best, shape, scalar), cfg.max_iterations, False, best_res)


def _unshape(v, shape, scalar):
    return complex(v[0, 0]) if scalar else v.reshape(shape)


def trapezoid_integrate(curve: DensityCurve, weight: Callable | None = None) -> float:
    """Trapezoid value of the integral of ``rho * weight`` over the converged grid."""
    lam, rho = curve.valid()
    if lam.size < 2:
        raise InsufficientGrid(f"need >= 2 converged points, have {lam.size}")
    f = rho if weight is None else rho * np.asarray(weight(lam), dtype=float)
    if not np.all(np.isfinite(f)):
        raise DomainError("weight is not finite on the grid")
    return float(np.trapezoid(f, lam))


def richardson_zero_limit(value_at_eps, value_at_half_eps):
    """Two-point extrapolation of an O(eps) quantity to eps -> 0."""
    return 2.0 * np.asarray(value_at_half_eps) - np.asarray(value_at_eps)
