"""Replica densities for row, column and Kronecker variance profiles.

Solves the saddle-point equations on a lambda grid for each ensemble and
reports the support edges (where rho first rises above 1e-5), the mass and
the first moment, which should equal alpha <s><t>.

    python3 demos/01_replica_densities.py
"""

from wishart_density import EnsembleSpec, LambdaGrid, Uniform, replica_density_curve
from wishart_density.cli import estimate_support_edges

ALPHA = 4.0
ENSEMBLES = {
    "row s~U[1,5]": EnsembleSpec.row_variance(ALPHA, Uniform(1, 5)),
    "row s~U[2,4]": EnsembleSpec.row_variance(ALPHA, Uniform(2, 4)),
    "column t~U[1,5]": EnsembleSpec.column_variance(ALPHA, Uniform(1, 5)),
    "kronecker s~U[1,5], t~U[0,2]": EnsembleSpec.kronecker(ALPHA, Uniform(1, 5), Uniform(0, 2)),
}

grid = LambdaGrid.linspace(0.5, 40.0, 1000, 1e-9)
for name, spec in ENSEMBLES.items():
    curve = replica_density_curve(spec, grid)
    lo, hi = estimate_support_edges(curve, 1e-5)
    print(f"{name:30s} edges [{lo:7.3f}, {hi:7.3f}]  mass {curve.mass():.4f}  "
          f"<lam> {curve.moment(1):.3f} (alpha<s><t> = {ALPHA * spec.v:.3f})")
