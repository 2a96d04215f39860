"""Eigenvalue densities of Wishart matrices built from non-i.i.d. rectangular matrices.

Three engines cross-check each other: replica saddle-point solvers
(:mod:`.replica`), belief propagation on sampled matrices (:mod:`.bp`) and
exact dense eigensolving (:mod:`.baseline`). Resolvents are evaluated at
``lam + 1j*epsilon`` with ``epsilon > 0``, so ``rho = -Im(chi_w)/pi``.
"""

from .baseline import (
    Histogram,
    empirical_density,
    eigvalsh_householder,
    histogram_from_spectra,
    householder_tridiagonalize,
    sturm_bisection_eigenvalues,
    trace_form_curve,
    trace_form_resolvent,
)
from .bp import BPState, bp_average_curve, bp_density_curve, bp_density_point, bp_solve_point
from .cli import CompareReport, RunConfig, compare, estimate_support_edges, parse_config
from .core import (
    DEFAULT_SOLVER,
    DensityCurve,
    LambdaGrid,
    SolverConfig,
    SpectralPoint,
    damped_fixed_point,
    trapezoid_integrate,
)
from .ensembles import (
    Constant,
    Discrete,
    EnsembleSpec,
    HyperparameterLaw,
    SampledEnsemble,
    Uniform,
    build_covariance_factors,
    expect_law,
    sample_matrix,
)
from .errors import (
    ConfigError,
    DomainError,
    EvaluationError,
    InsufficientGrid,
    InvalidLaw,
    NegativeDensity,
    NoSupportDetected,
    NonConvergence,
    NonFiniteIterate,
    SingularDenominator,
    SingularShift,
    WishartDensityError,
)
from .replica import (
    OrderParams,
    density_from_chi,
    inverse_moments_case1,
    mp_atom,
    mp_density,
    mp_density_curve,
    mp_edges,
    portfolio_quantities,
    replica_density_curve,
    solve_case1,
    solve_case2,
    solve_case3,
)

__version__ = "0.1.0"
