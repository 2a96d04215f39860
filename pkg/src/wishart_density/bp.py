"""Belief-propagation density of one sampled matrix.

Only the squared entries of the realized matrix enter; the covariance factors
are never consulted. With the matrix pre-scaled by ``1/sqrt(N)`` the message
equations read

    chi_w[k]   = 1 / (z + chi_tilde_w[k]),   chi_tilde_w = X2 @ chi_u
    chi_u[mu]  = 1 / (chi_tilde_u[mu] - 1),  chi_tilde_u = X2.T @ chi_w

with ``X2 = X**2``. Every update is a pair of real-by-complex matrix-vector
products, so one sweep costs O(N p).

Several spectral points are solved together by stacking them as columns; each
column is an independent fixed point and converged columns are frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

from .core import (
    DENSITY_ROUNDOFF,
    AndersonMixer,
    DensityCurve,
    LambdaGrid,
    SolverConfig,
    SpectralPoint,
)
from .ensembles import EnsembleSpec, SampledEnsemble, sample_matrix
from .errors import NegativeDensity, NonFiniteIterate

BP_DEFAULT_EPSILON = 1e-3
BP_DEFAULT_SOLVER = SolverConfig(tolerance=1e-10, max_iterations=20_000)


@dataclass
class BPState:
    chi_w: np.ndarray
    chi_tilde_w: np.ndarray
    chi_u: np.ndarray
    chi_tilde_u: np.ndarray
    point: SpectralPoint
    iterations: int = 0
    converged: bool = False
    residual: float = np.inf

    @property
    def rho(self) -> float:
        return bp_density_point(self)


class SquaredEntries:
    """Squared entries kept row-major and column-major for the two half-steps."""

    def __init__(self, matrix: np.ndarray):
        sq = np.asarray(matrix, dtype=float) ** 2
        self.rows = np.ascontiguousarray(sq)
        self.cols = np.ascontiguousarray(sq.T)

    @property
    def shape(self):
        return self.rows.shape

    @staticmethod
    def _apply(a, c):
        c = np.ascontiguousarray(c, dtype=complex)
        if c.shape[1] == 1 and _matvec is not None:
            # a thin BLAS product is memory-bound and slower than one fused pass
            re, im = _matvec(a, np.ascontiguousarray(c.real[:, 0]), np.ascontiguousarray(c.imag[:, 0]))
            return (re + 1j * im)[:, None]
        return (a @ c.view(float)).view(complex)

    def to_cols(self, chi_w):
        """``chi_tilde_u = X2.T @ chi_w`` for an ``(N, L)`` block."""
        return self._apply(self.cols, chi_w)

    def to_rows(self, chi_u):
        """``chi_tilde_w = X2 @ chi_u`` for a ``(p, L)`` block."""
        return self._apply(self.rows, chi_u)


def _matvec_loops(a, cr, ci):
    # (a @ cr, a @ ci) in a single pass over a
    n, m = a.shape
    outr = np.empty(n)
    outi = np.empty(n)
    for i in range(n):
        sr = 0.0
        si = 0.0
        for j in range(m):
            sr += a[i, j] * cr[j]
            si += a[i, j] * ci[j]
        outr[i] = sr
        outi[i] = si
    return outr, outi


_matvec = numba.njit(cache=True, fastmath=True)(_matvec_loops) if numba is not None else None


def _half_steps(op: SquaredEntries, chi_w, z):
    tu = op.to_cols(chi_w)
    cu = 1.0 / (tu - 1.0)
    tw = op.to_rows(cu)
    return 1.0 / (z + tw), tw, cu, tu


def _iterate(op: SquaredEntries, z: np.ndarray, x0: np.ndarray, cfg: SolverConfig):
    """Damped (optionally Anderson-mixed) iteration on the ``chi_w`` block."""
    n_cols = z.size
    out = np.array(x0, dtype=complex, copy=True)
    iters = np.full(n_cols, cfg.max_iterations, dtype=int)
    conv = np.zeros(n_cols, dtype=bool)
    resid = np.full(n_cols, np.inf)
    active = np.arange(n_cols)
    x = out.copy()
    cu_prev = None
    mixer = AndersonMixer(cfg.anderson_depth, cfg.damping) if cfg.anderson_depth else None
    for it in range(1, cfg.max_iterations + 1):
        fx, _, cu, _ = _half_steps(op, x, z[active])
        if not np.all(np.isfinite(fx)):
            raise NonFiniteIterate(it)
        g = fx - x
        res_w = np.abs(g).max(axis=0)
        res_u = np.full(active.size, np.inf) if cu_prev is None else np.abs(cu - cu_prev).max(axis=0)
        res = np.maximum(res_w, res_u)
        better = res < resid[active]
        resid[active[better]] = res[better]
        out[:, active[better]] = fx[:, better]
        done = res <= cfg.tolerance
        if done.any():
            conv[active[done]] = True
            iters[active[done]] = it
            keep = ~done
            active, x, g, fx, cu, res = active[keep], x[:, keep], g[:, keep], fx[:, keep], cu[:, keep], res[keep]
            if mixer is not None:
                mixer.keep(keep)
            if active.size == 0:
                break
        cu_prev = cu
        if mixer is not None and res.max() < cfg.anderson_start:
            x = mixer.step(x, g)
        else:
            x = x + cfg.damping * g
    return out, iters, conv, resid


def _default_init(n_rows, z):
    return np.tile(1.0 / z, (n_rows, 1)).astype(complex)


def _solve_block(op, lambdas, epsilon, cfg, init=None):
    """Solve all ``lambdas`` at once; returns final-half-step arrays and diagnostics."""
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    z = lam + 1j * epsilon
    x0 = _default_init(op.shape[0], z) if init is None else np.asarray(init, complex).reshape(op.shape[0], -1)
    chi_w, iters, conv, resid = _iterate(op, z, x0, cfg)
    wrong = conv & (chi_w.imag.max(axis=0) > DENSITY_ROUNDOFF)
    if wrong.any():
        # retry off-branch columns from the default start without mixing
        plain = cfg.replace(anderson_depth=0)
        cw2, it2, cv2, rs2 = _iterate(op, z[wrong], _default_init(op.shape[0], z[wrong]), plain)
        chi_w[:, wrong], iters[wrong], conv[wrong], resid[wrong] = cw2, iters[wrong] + it2, cv2, rs2
    chi_w, tw, cu, tu = _half_steps(op, chi_w, z)
    conv &= chi_w.imag.max(axis=0) <= DENSITY_ROUNDOFF
    return chi_w, tw, cu, tu, iters, conv, resid


def _states(lam, epsilon, blocks):
    chi_w, tw, cu, tu, iters, conv, resid = blocks
    return [
        BPState(chi_w[:, j].copy(), tw[:, j].copy(), cu[:, j].copy(), tu[:, j].copy(),
                SpectralPoint(float(lam[j]), epsilon), int(iters[j]), bool(conv[j]), float(resid[j]))
        for j in range(len(lam))
    ]


def bp_solve_point(sample: SampledEnsemble, point: SpectralPoint,
                   cfg: SolverConfig = BP_DEFAULT_SOLVER, init: BPState | None = None,
                   operator: SquaredEntries | None = None) -> BPState:
    """Message-passing fixed point at one spectral point.

    Default start is ``chi_w = 1/z`` (which gives ``chi_u = -1`` to leading
    order); ``init`` warm-starts from another state. Non-convergence is
    flagged on the returned state rather than raised.
    """
    op = operator or SquaredEntries(sample.matrix)
    x0 = None if init is None else init.chi_w[:, None]
    blocks = _solve_block(op, [point.lam], point.epsilon, cfg, x0)
    return _states([point.lam], point.epsilon, blocks)[0]


def bp_density_point(state: BPState) -> float:
    """``-Im(mean_k chi_w[k]) / pi`` with roundoff clamping."""
    chi = complex(np.mean(state.chi_w))
    rho = -chi.imag / np.pi
    if rho < -DENSITY_ROUNDOFF:
        raise NegativeDensity(f"Im mean chi_w = {chi.imag:.3e} > 0")
    return max(rho, 0.0)


def bp_density_curve(sample: SampledEnsemble, grid: LambdaGrid,
                     cfg: SolverConfig = BP_DEFAULT_SOLVER) -> DensityCurve:
    """Density of one sample over ``grid``.

    With ``cfg.warm_start`` the grid is swept point by point, each start taken
    from the previous state; otherwise all points are solved as one block.
    """
    op = SquaredEntries(sample.matrix)
    lam = grid.lambdas
    n = lam.size
    chi = np.full(n, np.nan + 0j)
    rho = np.full(n, np.nan)
    iters = np.zeros(n, dtype=int)
    conv = np.zeros(n, dtype=bool)
    if cfg.warm_start:
        prev = None
        for idx in grid.sweep_order():
            state = bp_solve_point(sample, SpectralPoint(float(lam[idx]), grid.epsilon), cfg,
                                   prev, operator=op)
            iters[idx], conv[idx] = state.iterations, state.converged
            chi[idx] = np.mean(state.chi_w)
            if state.converged:
                rho[idx] = bp_density_point(state)
                prev = state
    else:
        chi_w, _, _, _, iters, conv, _ = _solve_block(op, lam, grid.epsilon, cfg)
        chi = chi_w.mean(axis=0)
        rho = np.clip(-chi.imag / np.pi, 0.0, None)
    meta = {"epsilon": grid.epsilon, "seed": sample.seed, "N": sample.n_rows, "p": sample.n_cols,
            "alpha": sample.alpha}
    return DensityCurve(lam, rho, chi, iters, conv, "bp", sample.spec, meta)


def bp_average_curve(spec: EnsembleSpec, n: int, grid: LambdaGrid, seeds,
                     cfg: SolverConfig = BP_DEFAULT_SOLVER, executor=None) -> DensityCurve:
    """Seed-averaged BP density; per-point standard errors go to ``metadata['stderr']``.

    A grid point counts as converged when every seed converged there.
    ``executor`` (a ``concurrent.futures`` executor) parallelizes over seeds.
    """
    seeds = list(seeds)

    def one(seed):
        return bp_density_curve(sample_matrix(spec, n, seed), grid, cfg)

    curves = list(executor.map(one, seeds)) if executor is not None else [one(s) for s in seeds]
    rhos = np.stack([c.rho for c in curves])
    chis = np.stack([c.chi_w for c in curves])
    conv = np.all(np.stack([c.converged for c in curves]), axis=0)
    mean = np.nanmean(np.where(np.isfinite(rhos), rhos, np.nan), axis=0)
    k = max(len(seeds), 1)
    stderr = np.nanstd(rhos, axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.zeros(len(grid))
    iters = np.max(np.stack([c.iterations for c in curves]), axis=0)
    meta = {"epsilon": grid.epsilon, "N": n, "seeds": seeds, "stderr": stderr,
            "alpha": curves[0].metadata["alpha"]}
    return DensityCurve(grid.lambdas, mean, chis.mean(axis=0), iters, conv, "bp", spec, meta)


def reduced_order_params(state: BPState, m_diag, theta_diag) -> dict:
    """Ensemble-reduced scalars ``chi_s``, ``chi_t`` and the two trace identities they imply.

    Returns the sample averages ``chi_w``, ``chi_u`` next to the values
    ``(1 - alpha chi_t chi_s)/z`` and ``-1 + chi_s chi_t`` predicted from
    ``E[x^2] = m_kk theta_mumu``.
    """
    m = np.asarray(m_diag, float)
    th = np.asarray(theta_diag, float)
    n, p = state.chi_w.size, state.chi_u.size
    alpha = p / n
    chi_s = np.dot(m, state.chi_w) / n
    chi_t = np.dot(th, state.chi_u) / p
    z = state.point.z
    return {
        "chi_s": chi_s,
        "chi_t": chi_t,
        "chi_w": state.chi_w.mean(),
        "chi_u": state.chi_u.mean(),
        "chi_w_reduced": (1 - alpha * chi_t * chi_s) / z,
        "chi_u_reduced": -1 + chi_s * chi_t,
    }
