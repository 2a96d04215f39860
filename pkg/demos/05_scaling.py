"""Cost per lambda of BP against a dense eigensolve as N doubles.

BP touches each of the N x 4N squared entries a fixed number of times, so its
cost grows about 4x per doubling. Householder tridiagonalization is cubic and
grows about 8x.

    python3 demos/05_scaling.py
"""

import time

from wishart_density import EnsembleSpec, LambdaGrid, Uniform, bp_density_curve, eigvalsh_householder, sample_matrix
from wishart_density.bp import BP_DEFAULT_SOLVER

spec = EnsembleSpec.row_variance(4.0, Uniform(1, 5))
grid = LambdaGrid.linspace(4.0, 30.0, 16, 1e-3)
cfg = BP_DEFAULT_SOLVER.replace(warm_start=False)
eigvalsh_householder([[1.0]])

prev = None
for n in (250, 500, 1000):
    sample = sample_matrix(spec, n, seed=0)
    bp_density_curve(sample, grid, cfg)
    t0 = time.perf_counter()
    bp_density_curve(sample, grid, cfg)
    t_bp = (time.perf_counter() - t0) / len(grid)
    w = sample.wishart()
    t0 = time.perf_counter()
    eigvalsh_householder(w)
    t_eig = time.perf_counter() - t0
    ratio = "" if prev is None else f"  ratios {t_bp / prev[0]:.1f}x / {t_eig / prev[1]:.1f}x"
    print(f"N={n:5d}  BP {1e3 * t_bp:7.2f} ms per lambda  eigensolve {t_eig:6.3f} s{ratio}")
    prev = (t_bp, t_eig)
