"""Inverse moments of the row-variance density and minimum-variance investing.

For alpha > 1 the spectrum stays away from zero and <1/lam>, <1/lam^2> have
closed forms in terms of <1/s> and <1/s^2>. They give the minimal risk per
asset and the concentration q_w of the optimal weights. The demo checks
<1/lam> against the average over exact spectra.

    python3 demos/04_inverse_moments.py
"""

import numpy as np

from wishart_density import (
    EnsembleSpec,
    Uniform,
    inverse_moments_case1,
    portfolio_quantities,
)
from wishart_density.baseline import sample_spectra

law, alpha = Uniform(1, 5), 4.0
m = inverse_moments_case1(law, alpha)
p = portfolio_quantities(law, alpha)
print(f"<1/lam> = {m.m1:.6f}  (ln 5 / 12 = {np.log(5) / 12:.6f})")
print(f"<1/lam^2> = {m.m2:.6f}")
print(f"minimal risk {p.epsilon_min:.6f}, q_w {p.q_w:.6f}")

spectra = sample_spectra(EnsembleSpec.row_variance(alpha, law), 300, range(20))
per = np.array([np.mean(1 / ev) for ev in spectra])
print(f"20 exact spectra at N=300: <1/lam> = {per.mean():.6f} +- {per.std(ddof=1) / np.sqrt(per.size):.1e}")
