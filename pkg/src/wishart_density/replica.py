"""Asymptotic density from the replica-symmetric saddle point.

Three covariance structures are supported, each reduced to a scalar complex
fixed point evaluated at ``z = lam + 1j*eps``:

* row variances ``s``: ``chi_s = < s / (z + alpha s / (chi_s - 1)) >_s``
* column variances ``t``: ``chi_w = 1 / (z + alpha < t / (t chi_w - 1) >_t)``
* Kronecker ``M (x) Theta``: ``chi_s = < s / (z + alpha s chi_t) >_s`` with
  ``chi_t = < t / (t chi_s - 1) >_t``

The density is ``-Im(chi_w) / pi``. Off the physical branch the same
equations have spurious solutions; solutions are checked for
``Im chi_w <= 0`` and re-solved from the conjugate iterate or by continuation
in ``eps`` when the check fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import (
    DEFAULT_SOLVER,
    DENSITY_ROUNDOFF,
    DensityCurve,
    LambdaGrid,
    SolverConfig,
    SpectralPoint,
    damped_fixed_point,
    richardson_zero_limit,
)
from .ensembles import (
    COLUMN,
    DEFAULT_NODES,
    KRONECKER,
    ROW,
    UNIT,
    EnsembleSpec,
    HyperparameterLaw,
    expect_law,
)
from .errors import DomainError, NegativeDensity, NonConvergence, SingularDenominator

DEFAULT_EPSILON = 1e-6
_TINY = np.finfo(float).tiny


@dataclass
class OrderParams:
    chi_w: complex
    chi_s: complex
    chi_u: complex
    chi_t: complex
    point: SpectralPoint
    alpha: float
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0

    @property
    def rho(self) -> float:
        return density_from_chi(self)

    def consistency_residuals(self) -> tuple[float, float]:
        """Residuals of ``chi_s = (1 - z chi_w)/(alpha chi_t)`` and ``chi_t = (1 + chi_u)/chi_s``."""
        z = self.point.z
        r1 = abs(self.chi_s - (1 - z * self.chi_w) / (self.alpha * self.chi_t))
        r2 = abs(self.chi_t - (1 + self.chi_u) / self.chi_s)
        return r1, r2


def density_from_chi(params) -> float:
    """``-Im(chi_w)/pi`` with roundoff-level negatives clamped to zero.

    Accepts an :class:`OrderParams` or a bare complex ``chi_w``.
    """
    chi_w = params.chi_w if hasattr(params, "chi_w") else complex(params)
    rho = -chi_w.imag / np.pi
    if rho < -DENSITY_ROUNDOFF:
        raise NegativeDensity(f"Im chi_w = {chi_w.imag:.3e} > 0: advanced branch")
    return max(rho, 0.0)


# -- scalar kernels ---------------------------------------------------------


class _Kernel:
    """One saddle-point structure with quadrature nodes frozen in."""

    def __init__(self, alpha, s_nodes, s_weights, t_nodes, t_weights):
        self.alpha = float(alpha)
        self.s, self.ws = np.asarray(s_nodes, float), np.asarray(s_weights, float)
        self.t, self.wt = np.asarray(t_nodes, float), np.asarray(t_weights, float)

    def asymptote(self, z):
        raise NotImplementedError

    def step(self, c, z):
        raise NotImplementedError

    def finish(self, c, point, iterations, residual) -> OrderParams:
        raise NotImplementedError

    def chi_w(self, c, z):
        raise NotImplementedError


class _RowKernel(_Kernel):
    # variable: chi_s

    def asymptote(self, z):
        return np.dot(self.ws, self.s) / z

    def _q(self, c, z):
        d = c - 1.0
        if abs(d) < _TINY:
            raise SingularDenominator("chi_s - 1 underflowed")
        return z + self.alpha * self.s / d, d

    def step(self, c, z):
        q, _ = self._q(c, z)
        return np.dot(self.ws, self.s / q)

    def chi_w(self, c, z):
        q, _ = self._q(c, z)
        return np.dot(self.ws, 1.0 / q)

    def finish(self, c, point, iterations, residual):
        q, d = self._q(c, point.z)
        return OrderParams(
            chi_w=complex(np.dot(self.ws, 1.0 / q)),
            chi_s=complex(np.dot(self.ws, self.s / q)),
            chi_u=complex(1.0 / d),
            chi_t=complex(1.0 / d),
            point=point, alpha=self.alpha, iterations=iterations, residual=residual,
        )


class _ColumnKernel(_Kernel):
    # variable: chi_w; chi_t holds chi_tilde_w / alpha

    def asymptote(self, z):
        return 1.0 / z

    def _den(self, c):
        d = self.t * c - 1.0
        small = np.abs(d) < _TINY
        if small.any():
            raise SingularDenominator(f"t*chi_w - 1 underflowed at t={self.t[small][0]}")
        return d

    def _tilde(self, c):
        return self.alpha * np.dot(self.wt, self.t / self._den(c))

    def step(self, c, z):
        return 1.0 / (z + self._tilde(c))

    def chi_w(self, c, z):
        return self.step(c, z)

    def finish(self, c, point, iterations, residual):
        d = self._den(c)
        tilde = self.alpha * np.dot(self.wt, self.t / d)
        chi_w = 1.0 / (point.z + tilde)
        return OrderParams(
            chi_w=complex(chi_w),
            chi_s=complex(chi_w),
            chi_u=complex(np.dot(self.wt, 1.0 / d)),
            chi_t=complex(tilde / self.alpha),
            point=point, alpha=self.alpha, iterations=iterations, residual=residual,
        )


class _KroneckerKernel(_Kernel):
    # variable: chi_s

    def asymptote(self, z):
        return np.dot(self.ws, self.s) / z

    def _parts(self, c, z):
        d = self.t * c - 1.0
        small = np.abs(d) < _TINY
        if small.any():
            raise SingularDenominator(f"t*chi_s - 1 underflowed at t={self.t[small][0]}")
        chi_t = np.dot(self.wt, self.t / d)
        q = z + self.alpha * self.s * chi_t
        return d, chi_t, q

    def step(self, c, z):
        _, _, q = self._parts(c, z)
        return np.dot(self.ws, self.s / q)

    def chi_w(self, c, z):
        _, _, q = self._parts(c, z)
        return np.dot(self.ws, 1.0 / q)

    def finish(self, c, point, iterations, residual):
        d, chi_t, q = self._parts(c, point.z)
        return OrderParams(
            chi_w=complex(np.dot(self.ws, 1.0 / q)),
            chi_s=complex(np.dot(self.ws, self.s / q)),
            chi_u=complex(np.dot(self.wt, 1.0 / d)),
            chi_t=complex(chi_t),
            point=point, alpha=self.alpha, iterations=iterations, residual=residual,
        )


def _on_branch(kernel, c, z) -> bool:
    return kernel.chi_w(c, z).imag <= np.pi * DENSITY_ROUNDOFF


def _continuation_start(kernel, point, cfg):
    """Track the retarded solution from a large imaginary part down to ``10*eps``."""
    eps = max(1.0, abs(point.lam))
    c = kernel.asymptote(complex(point.lam, eps))
    used = 0
    while eps > 10 * point.epsilon:
        z = complex(point.lam, eps)
        res = damped_fixed_point(lambda v: kernel.step(v, z), c, cfg)
        c, used = res.solution, used + res.iterations
        eps /= 10.0
    return c, used


def _solve(kernel: _Kernel, point: SpectralPoint, cfg: SolverConfig, init) -> OrderParams:
    z = point.z

    def run(start):
        return damped_fixed_point(lambda v: kernel.step(v, z), start, cfg)

    total = 0
    attempts: list[Callable] = []
    if init is not None:
        attempts.append(lambda: (complex(init), 0))
    attempts.append(lambda: _continuation_start(kernel, point, cfg))

    best = None
    for make_start in attempts:
        start, used = make_start()
        total += used
        res = run(start)
        total += res.iterations
        if res.converged and not _on_branch(kernel, res.solution, z):
            # the conjugate of an advanced-branch root seeds the retarded one
            res2 = run(np.conj(res.solution))
            total += res2.iterations
            if res2.converged:
                res = res2
        if res.converged and _on_branch(kernel, res.solution, z):
            return kernel.finish(res.solution, point, total, res.residual)
        if best is None or res.residual < best.residual:
            best = res
    if best.converged:
        # converged, but only to the advanced branch
        return kernel.finish(best.solution, point, total, best.residual)
    raise NonConvergence(best.solution, best.residual, total)


def _nodes(law: HyperparameterLaw, n_nodes: int):
    return law.quadrature(n_nodes)


def _kernel_for(spec: EnsembleSpec, n_nodes=DEFAULT_NODES) -> _Kernel:
    s, ws = _nodes(spec.law_s, n_nodes)
    t, wt = _nodes(spec.law_t, n_nodes)
    cls = {ROW: _RowKernel, COLUMN: _ColumnKernel, KRONECKER: _KroneckerKernel}[spec.structure]
    return cls(spec.alpha, s, ws, t, wt)


def _check_alpha(alpha):
    if not (np.isfinite(alpha) and alpha > 0):
        raise DomainError(f"alpha must be > 0, got {alpha}")


def solve_case1(law_s, alpha, point, cfg=DEFAULT_SOLVER, init=None, n_nodes=DEFAULT_NODES):
    """Row-variance ensemble; ``init`` seeds ``chi_s``."""
    _check_alpha(alpha)
    s, ws = _nodes(law_s, n_nodes)
    return _solve(_RowKernel(alpha, s, ws, [1.0], [1.0]), point, cfg, init)


def solve_case2(law_t, alpha, point, cfg=DEFAULT_SOLVER, init=None, n_nodes=DEFAULT_NODES):
    """Column-variance ensemble; ``init`` seeds ``chi_w``."""
    _check_alpha(alpha)
    t, wt = _nodes(law_t, n_nodes)
    return _solve(_ColumnKernel(alpha, [1.0], [1.0], t, wt), point, cfg, init)


def solve_case3(law_s, law_t, alpha, point, cfg=DEFAULT_SOLVER, init=None,
                n_nodes=DEFAULT_NODES):
    """Kronecker ensemble; ``init`` seeds ``chi_s`` (a pair is accepted, first entry used)."""
    _check_alpha(alpha)
    if init is not None and np.ndim(init) > 0:
        init = np.ravel(init)[0]
    s, ws = _nodes(law_s, n_nodes)
    t, wt = _nodes(law_t, n_nodes)
    return _solve(_KroneckerKernel(alpha, s, ws, t, wt), point, cfg, init)


def _variable(params: OrderParams, kernel: _Kernel):
    return params.chi_w if isinstance(kernel, _ColumnKernel) else params.chi_s


def _sweep(kernel: _Kernel, grid: LambdaGrid, epsilon: float, cfg: SolverConfig):
    n = len(grid)
    chi = np.full(n, np.nan + 0j)
    rho = np.full(n, np.nan)
    its = np.zeros(n, dtype=int)
    ok = np.zeros(n, dtype=bool)
    prev = None
    for k, idx in enumerate(grid.sweep_order()):
        point = SpectralPoint(float(grid.lambdas[idx]), epsilon)
        if k == 0:
            init = kernel.asymptote(point.z)
        else:
            init = prev if cfg.warm_start else kernel.asymptote(point.z)
        try:
            params = _solve(kernel, point, cfg, init)
            r = density_from_chi(params)
        except (NonConvergence, SingularDenominator, NegativeDensity) as exc:
            its[idx] = getattr(exc, "iterations", 0)
            continue
        chi[idx], rho[idx], its[idx], ok[idx] = params.chi_w, r, params.iterations, True
        prev = _variable(params, kernel)
    return chi, rho, its, ok


def replica_density_curve(spec: EnsembleSpec, grid: LambdaGrid, cfg: SolverConfig = DEFAULT_SOLVER,
                          n_nodes: int = DEFAULT_NODES, extrapolate: bool = False) -> DensityCurve:
    """Sweep the saddle-point solver over ``grid`` (descending, warm-started by default).

    With ``extrapolate=True`` every point is solved at ``eps`` and ``eps/2`` and
    combined by two-point Richardson extrapolation.
    """
    kernel = _kernel_for(spec, n_nodes)
    chi, rho, its, ok = _sweep(kernel, grid, grid.epsilon, cfg)
    meta = {"epsilon": grid.epsilon, "alpha": spec.alpha, "n_nodes": n_nodes}
    if extrapolate:
        chi2, rho2, its2, ok2 = _sweep(kernel, grid, grid.epsilon / 2, cfg)
        chi = richardson_zero_limit(chi, chi2)
        rho = np.clip(richardson_zero_limit(rho, rho2), 0.0, None)
        its, ok = its + its2, ok & ok2
        meta["extrapolated"] = True
    return DensityCurve(grid.lambdas, rho, chi, its, ok, "replica", spec, meta)


# -- closed forms ------------------------------------------------------------


def mp_edges(alpha: float, v: float) -> tuple[float, float]:
    r = math.sqrt(alpha)
    return float((1 - r) ** 2 * v), float((1 + r) ** 2 * v)


def mp_atom(alpha: float) -> float:
    """Mass of the zero eigenvalue atom, ``max(1 - alpha, 0)``."""
    return max(1.0 - alpha, 0.0)


def mp_density(alpha: float, v: float, lam):
    """Continuous part of the Marchenko-Pastur density (the atom is excluded).

    Vectorized over ``lam``; returns a float for scalar input.
    """
    if not (alpha > 0 and v > 0):
        raise DomainError("mp_density requires alpha > 0 and v > 0")
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0):
        raise DomainError("mp_density is undefined for lambda < 0")
    lo, hi = mp_edges(alpha, v)
    inside = np.clip(hi - lam_arr, 0, None) * np.clip(lam_arr - lo, 0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(lam_arr > 0, np.sqrt(inside) / (2 * np.pi * lam_arr * v), 0.0)
    return float(out) if out.ndim == 0 else out


def mp_density_curve(alpha: float, v: float, grid: LambdaGrid, ensemble=None) -> DensityCurve:
    lam = grid.lambdas
    rho = mp_density(alpha, v, lam)
    n = lam.size
    return DensityCurve(lam, rho, np.full(n, np.nan + 0j), np.zeros(n, int), np.ones(n, bool),
                        "mp", ensemble, {"alpha": alpha, "v": v, "atom": mp_atom(alpha)})


class InverseMoments(NamedTuple):
    m1: float
    m2: float


class PortfolioQuantities(NamedTuple):
    epsilon_min: float
    q_w: float


def _inverse_brackets(law_s, alpha, n_nodes):
    if not alpha > 1:
        raise DomainError("moment identities require alpha > 1")
    if law_s.support[0] <= 0:
        raise DomainError("moment identities require a law supported away from 0")
    inv1 = expect_law(law_s, lambda s: 1.0 / s, n_nodes).real
    inv2 = expect_law(law_s, lambda s: 1.0 / s**2, n_nodes).real
    return inv1, inv2


def inverse_moments_case1(law_s, alpha, n_nodes=DEFAULT_NODES) -> InverseMoments:
    """``<1/lam>`` and ``<1/lam^2>`` of the row-variance density."""
    inv1, inv2 = _inverse_brackets(law_s, alpha, n_nodes)
    a1 = alpha - 1.0
    return InverseMoments(inv1 / a1, inv1**2 / a1**3 + inv2 / a1**2)


def portfolio_quantities(law_s, alpha, n_nodes=DEFAULT_NODES) -> PortfolioQuantities:
    """Minimal risk per asset and the weight concentration ``q_w`` of minimum-variance investing."""
    inv1, inv2 = _inverse_brackets(law_s, alpha, n_nodes)
    return PortfolioQuantities((alpha - 1.0) / (2.0 * inv1), inv2 / inv1**2 + 1.0 / (alpha - 1.0))


__all__ = [
    "DEFAULT_EPSILON", "OrderParams", "density_from_chi", "solve_case1", "solve_case2",
    "solve_case3", "replica_density_curve", "mp_edges", "mp_atom", "mp_density",
    "mp_density_curve", "inverse_moments_case1", "portfolio_quantities", "InverseMoments",
    "PortfolioQuantities", "UNIT",
]
