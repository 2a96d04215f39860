"""Belief propagation on one sampled matrix against its exact spectrum.

BP only sees the squared entries of a single 500 x 2000 sample. Its density
is set against a histogram of the eigenvalues of X X^T of the same sample
and against the replica prediction for the ensemble.

    python3 demos/02_belief_propagation.py
"""

import numpy as np

from wishart_density import (
    EnsembleSpec,
    LambdaGrid,
    Uniform,
    bp_density_curve,
    eigvalsh_householder,
    replica_density_curve,
    sample_matrix,
)
from wishart_density.bp import BP_DEFAULT_SOLVER

spec = EnsembleSpec.row_variance(4.0, Uniform(1, 5))
sample = sample_matrix(spec, 500, seed=0)
grid = LambdaGrid.linspace(1.0, 36.0, 36, 1e-3)

# batched solve: every lambda iterates as one column of a GEMM
bp = bp_density_curve(sample, grid, BP_DEFAULT_SOLVER.replace(warm_start=False))
replica = replica_density_curve(spec, grid)

ev = eigvalsh_householder(sample.wishart())
edges = np.concatenate([[0.5], 0.5 * (grid.lambdas[1:] + grid.lambdas[:-1]), [36.5]])
hist = np.histogram(ev, bins=edges)[0] / ev.size / np.diff(edges)

print(" lambda      bp   exact  replica")
for lam, b, h, r in zip(grid.lambdas[::3], bp.rho[::3], hist[::3], replica.rho[::3]):
    print(f"{lam:7.2f} {b:7.4f} {h:7.4f} {r:8.4f}")
print(f"BP mass {bp.mass():.4f}, converged {bp.n_converged}/{len(bp)}")
