"""Exact references: Householder + Sturm bisection eigenvalues, empirical
histograms, and the trace-form resolvent recursion with explicit inverses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_SOLVER, DensityCurve, SolverConfig, SpectralPoint
from .ensembles import EnsembleSpec, sample_matrix
from .errors import (
    DomainError,
    NegativeDensity,
    NonConvergence,
    SingularDenominator,
    SingularShift,
)
from .replica import OrderParams, _Kernel, _solve

DEFAULT_ABS_TOL = 1e-10
DEFAULT_BINS = 100


try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


def _householder_numpy(a):
    n = a.shape[0]
    off = np.zeros(n - 1)
    for k in range(n - 2):
        x = a[k + 1:, k]
        sigma = math.sqrt(float(x @ x))
        if sigma == 0.0:
            continue
        beta = -math.copysign(sigma, x[0])
        v = x.copy()
        v[0] -= beta
        v /= math.sqrt(float(v @ v))
        b = a[k + 1:, k + 1:]
        p = b @ v
        w = 2.0 * (p - (v @ p) * v)
        b -= np.outer(v, w)
        b -= np.outer(w, v)
        off[k] = beta
    off[n - 2] = a[n - 1, n - 2]
    return np.diag(a).copy(), off


def _sturm_count_numpy(d, e2, x, pivmin):
    # a vanishing pivot is replaced by -pivmin before it is counted
    q = d[0] - x
    q = np.where(np.abs(q) < pivmin, -pivmin, q)
    count = (q < 0).astype(np.int64)
    for i in range(1, d.size):
        q = d[i] - x - e2[i - 1] / q
        q = np.where(np.abs(q) < pivmin, -pivmin, q)
        count += q < 0
    return count


def _householder_loops(a):
    # same reflections as _householder_numpy, written as explicit loops for the JIT
    n = a.shape[0]
    off = np.zeros(n - 1)
    v = np.empty(n)
    p = np.empty(n)
    w = np.empty(n)
    for k in range(n - 2):
        m = n - k - 1
        s = 0.0
        for i in range(m):
            s += a[k + 1 + i, k] * a[k + 1 + i, k]
        sigma = math.sqrt(s)
        if sigma == 0.0:
            continue
        beta = -sigma if a[k + 1, k] >= 0 else sigma
        for i in range(m):
            v[i] = a[k + 1 + i, k]
        v[0] -= beta
        nv = 0.0
        for i in range(m):
            nv += v[i] * v[i]
        nv = math.sqrt(nv)
        for i in range(m):
            v[i] /= nv
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += a[k + 1 + i, k + 1 + j] * v[j]
            p[i] = acc
        kv = 0.0
        for i in range(m):
            kv += v[i] * p[i]
        for i in range(m):
            w[i] = 2.0 * (p[i] - kv * v[i])
        for i in range(m):
            vi = v[i]
            wi = w[i]
            for j in range(m):
                a[k + 1 + i, k + 1 + j] -= vi * w[j] + wi * v[j]
        off[k] = beta
    off[n - 2] = a[n - 1, n - 2]
    d = np.empty(n)
    for i in range(n):
        d[i] = a[i, i]
    return d, off


def _sturm_count_loops(d, e2, x, pivmin):
    # row-outer order keeps the shifts independent in the inner loop
    m = x.size
    q = np.empty(m)
    count = np.zeros(m, np.int64)
    for j in range(m):
        qq = d[0] - x[j]
        qq = qq if abs(qq) >= pivmin else -pivmin
        q[j] = qq
        count[j] += qq < 0
    for i in range(1, d.size):
        di = d[i]
        ei = e2[i - 1]
        for j in range(m):
            qq = di - x[j] - ei / q[j]
            qq = qq if abs(qq) >= pivmin else -pivmin  # branch-free so the loop vectorizes
            q[j] = qq
            count[j] += qq < 0
    return count


if numba is not None:
    _householder_kernel = numba.njit(cache=True)(_householder_loops)
    _sturm_kernel = numba.njit(cache=True, fastmath=True)(_sturm_count_loops)
else:  # pragma: no cover
    _householder_kernel = _householder_numpy
    _sturm_kernel = _sturm_count_numpy


def householder_tridiagonalize(a, use_jit: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Reduce a real symmetric matrix to tridiagonal form by Householder reflections.

    Returns ``(diag, offdiag)`` of the orthogonally similar tridiagonal matrix.
    """
    a = np.array(a, dtype=float, copy=True, order="C")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("expected a square matrix")
    n = a.shape[0]
    if n == 0:
        return np.empty(0), np.empty(0)
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise DomainError("matrix is not symmetric")
    if n == 1:
        return a[0].copy(), np.empty(0)
    return (_householder_kernel if use_jit else _householder_numpy)(a)


def sturm_count(diag, offdiag, x, use_jit: bool = True) -> np.ndarray:
    """Number of eigenvalues strictly below each shift in ``x``."""
    d = np.ascontiguousarray(diag, dtype=float)
    e2 = np.ascontiguousarray(offdiag, dtype=float) ** 2
    x = np.ascontiguousarray(np.atleast_1d(x), dtype=float)
    pivmin = np.finfo(float).tiny * max(1.0, float(e2.max()) if e2.size else 1.0)
    return (_sturm_kernel if use_jit else _sturm_count_numpy)(d, e2, x, pivmin)


def gershgorin_bounds(diag, offdiag) -> tuple[float, float]:
    d = np.asarray(diag, dtype=float)
    e = np.abs(np.asarray(offdiag, dtype=float))
    r = np.zeros_like(d)
    r[:-1] += e
    r[1:] += e
    return float((d - r).min()), float((d + r).max())


def sturm_bisection_eigenvalues(diag, offdiag, abs_tol: float = DEFAULT_ABS_TOL) -> np.ndarray:
    """All eigenvalues of a symmetric tridiagonal matrix, ascending, each within ``abs_tol``.

    Bisection runs on all ``N`` eigenvalue indices at once, starting from the
    Gershgorin interval.
    """
    if not abs_tol > 0:
        raise DomainError("abs_tol must be > 0")
    d = np.asarray(diag, dtype=float)
    n = d.size
    if n == 0:
        return np.empty(0)
    lo, hi = gershgorin_bounds(d, offdiag)
    pad = abs_tol + 2 * np.finfo(float).eps * max(abs(lo), abs(hi), 1.0)
    lo, hi = lo - pad, hi + pad
    steps = max(1, math.ceil(math.log2((hi - lo) / abs_tol)) + 1)
    k = np.arange(n)
    left = np.full(n, lo)
    right = np.full(n, hi)
    for _ in range(steps):
        mid = 0.5 * (left + right)
        above = sturm_count(d, offdiag, mid) > k
        right = np.where(above, mid, right)
        left = np.where(above, left, mid)
    return 0.5 * (left + right)


def eigvalsh_householder(a, abs_tol: float = DEFAULT_ABS_TOL) -> np.ndarray:
    d, e = householder_tridiagonalize(a)
    return sturm_bisection_eigenvalues(d, e, abs_tol)


# -- empirical spectra ---------------------------------------------------------


@dataclass
class Histogram:
    bin_edges: np.ndarray
    mass: np.ndarray
    mass_stderr: np.ndarray
    n_samples: int
    n_matrix: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.size != self.bin_edges.size - 1:
            raise DomainError("need len(mass) == len(bin_edges) - 1")

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    def density(self):
        return self.mass / self.widths

    def to_curve(self, ensemble=None) -> DensityCurve:
        """Bin-centred density curve; per-bin density errors go to ``metadata['stderr']``."""
        n = self.mass.size
        meta = dict(self.metadata, stderr=self.mass_stderr / self.widths,
                    n_samples=self.n_samples, N=self.n_matrix, bin_edges=self.bin_edges)
        return DensityCurve(self.centers, self.density(), np.full(n, np.nan + 0j),
                            np.zeros(n, int), np.ones(n, bool), "exact", ensemble, meta)


def sample_spectra(spec: EnsembleSpec, n: int, seeds, abs_tol: float = DEFAULT_ABS_TOL,
                   executor=None) -> list[np.ndarray]:
    """Eigenvalues of ``X X^T`` for each seed, via Householder + bisection."""

    def one(seed):
        return eigvalsh_householder(sample_matrix(spec, n, seed).wishart(), abs_tol)

    seeds = list(seeds)
    return list(executor.map(one, seeds)) if executor is not None else [one(s) for s in seeds]


def histogram_from_spectra(spectra, bin_edges=None, n_bins: int = DEFAULT_BINS) -> Histogram:
    spectra = [np.asarray(s, float) for s in spectra]
    if not spectra:
        raise DomainError("need at least one spectrum")
    n = spectra[0].size
    if bin_edges is None:
        top = 1.2 * max(float(s.max()) for s in spectra)
        bin_edges = np.linspace(0.0, top, n_bins + 1)
    bin_edges = np.asarray(bin_edges, float)
    per = np.stack([np.histogram(s, bins=bin_edges)[0] / s.size for s in spectra])
    k = per.shape[0]
    stderr = per.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.zeros(per.shape[1])
    return Histogram(bin_edges, per.mean(axis=0), stderr, k, n)


def empirical_density(spec: EnsembleSpec, n: int, n_samples: int, seeds=None, bin_edges=None,
                      base_seed: int = 0, abs_tol: float = DEFAULT_ABS_TOL,
                      executor=None) -> Histogram:
    """Histogram of exact eigenvalues averaged over ``n_samples`` seeded matrices.

    Sample ``i`` uses ``seeds[i]`` or, by default, ``base_seed + i``.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    seeds = list(range(base_seed, base_seed + n_samples)) if seeds is None else list(seeds)[:n_samples]
    spectra = sample_spectra(spec, n, seeds, abs_tol, executor)
    h = histogram_from_spectra(spectra, bin_edges)
    h.metadata["seeds"] = seeds
    return h


# -- trace-form resolvent -----------------------------------------------------


def _is_diagonal(a):
    return a.ndim == 1 or np.count_nonzero(a - np.diag(np.diag(a))) == 0


class _TraceKernel(_Kernel):
    """Scalar recursion on ``chi_s`` with matrix traces; variable is ``chi_s``."""

    def __init__(self, m, theta):
        m = np.asarray(m, dtype=float)
        theta = np.asarray(theta, dtype=float)
        self.n = m.shape[0]
        self.p = theta.shape[0]
        self.alpha = self.p / self.n
        self.m_diag = m if m.ndim == 1 else (np.diag(m).copy() if _is_diagonal(m) else None)
        self.t_diag = theta if theta.ndim == 1 else (np.diag(theta).copy() if _is_diagonal(theta) else None)
        self.m = m
        self.theta = theta

    @staticmethod
    def _trace_inv(a):
        try:
            return np.trace(np.linalg.inv(a))
        except np.linalg.LinAlgError as exc:
            raise SingularShift(str(exc)) from exc

    def _chi_u(self, c):
        if self.t_diag is not None:
            d = c * self.t_diag - 1.0
            if np.any(d == 0):
                raise SingularShift("chi_s * Theta - I is singular")
            return np.mean(1.0 / d)
        return self._trace_inv(c * self.theta - np.eye(self.p)) / self.p

    def _chi_w(self, chi_t, z):
        if self.m_diag is not None:
            d = z + self.alpha * chi_t * self.m_diag
            if np.any(d == 0):
                raise SingularShift("z I + alpha chi_t M is singular")
            return np.mean(1.0 / d)
        return self._trace_inv(z * np.eye(self.n) + self.alpha * chi_t * self.m) / self.n

    def _parts(self, c, z):
        chi_u = self._chi_u(c)
        chi_t = (1.0 + chi_u) / c
        chi_w = self._chi_w(chi_t, z)
        return chi_u, chi_t, chi_w

    def asymptote(self, z):
        mean_s = np.mean(self.m_diag) if self.m_diag is not None else np.trace(self.m) / self.n
        return mean_s / z

    def step(self, c, z):
        _, chi_t, chi_w = self._parts(c, z)
        return (1.0 - z * chi_w) / (self.alpha * chi_t)

    def chi_w(self, c, z):
        return self._parts(c, z)[2]

    def finish(self, c, point, iterations, residual):
        chi_u, chi_t, chi_w = self._parts(c, point.z)
        chi_s = (1.0 - point.z * chi_w) / (self.alpha * chi_t)
        return OrderParams(complex(chi_w), complex(chi_s), complex(chi_u), complex(chi_t),
                           point, self.alpha, iterations, True, residual)


def trace_form_resolvent(m, theta, point: SpectralPoint, cfg: SolverConfig = DEFAULT_SOLVER,
                         init=None) -> OrderParams:
    """Order parameters from the trace recursion for given covariance factors.

    ``m`` (N x N) and ``theta`` (p x p) may also be passed as 1-D diagonals.
    Dense non-diagonal factors cost two matrix inversions per pass.
    """
    return _solve(_TraceKernel(m, theta), point, cfg, init)


def trace_form_curve(m, theta, grid, cfg: SolverConfig = DEFAULT_SOLVER, ensemble=None) -> DensityCurve:
    kernel = _TraceKernel(m, theta)
    lam = grid.lambdas
    n = lam.size
    chi = np.full(n, np.nan + 0j)
    rho = np.full(n, np.nan)
    its = np.zeros(n, int)
    ok = np.zeros(n, bool)
    prev = None
    for idx in grid.sweep_order():
        point = SpectralPoint(float(lam[idx]), grid.epsilon)
        init = prev if (prev is not None and cfg.warm_start) else kernel.asymptote(point.z)
        try:
            params = _solve(kernel, point, cfg, init)
            r = params.rho
        except (NonConvergence, SingularShift, SingularDenominator, NegativeDensity) as exc:
            its[idx] = getattr(exc, "iterations", 0)
            continue
        chi[idx], rho[idx], its[idx], ok[idx] = params.chi_w, r, params.iterations, True
        prev = params.chi_s
    return DensityCurve(lam, rho, chi, its, ok, "trace_form", ensemble,
                        {"epsilon": grid.epsilon, "alpha": kernel.alpha})
