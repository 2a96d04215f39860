import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wishart_density import (
    Constant,
    Discrete,
    DomainError,
    EnsembleSpec,
    EvaluationError,
    InvalidLaw,
    Uniform,
    build_covariance_factors,
    expect_law,
    sample_matrix,
)
from wishart_density.ensembles import UNIT, draw_matrix, haar_orthogonal, n_columns


class TestLaws:
    def test_uniform_inverse(self):
        assert expect_law(Uniform(1, 5), lambda s: 1 / s).real == pytest.approx(np.log(5) / 4, rel=1e-12)
        assert expect_law(Uniform(1, 5), lambda s: 1 / s).real == pytest.approx(0.4023594, abs=1e-7)

    def test_constant(self):
        assert expect_law(Constant(3), lambda s: s) == 3

    def test_discrete(self):
        assert expect_law(Discrete((1, 2, 3)), lambda s: s**2).real == pytest.approx(14 / 3)

    def test_uniform_polynomial_exact(self):
        # <s^3> over U[0, 2] = 2
        assert expect_law(Uniform(0, 2), lambda s: s**3).real == pytest.approx(2.0, rel=1e-14)

    def test_complex_integrand(self):
        z = 4 + 1j
        got = expect_law(Uniform(1, 5), lambda s: 1 / (z - s))
        exact = (np.log(z - 1) - np.log(z - 5)) / 4
        assert abs(got - exact) < 1e-10

    def test_non_finite_integrand_names_node(self):
        with pytest.raises(EvaluationError) as info, np.errstate(divide="ignore"):
            expect_law(Discrete((0.0, 1.0)), lambda s: 1 / s)
        assert info.value.node == 0.0

    @pytest.mark.parametrize("make", [lambda: Uniform(2, 1), lambda: Uniform(-1, 1), lambda: Uniform(1, 1),
                                      lambda: Constant(-1), lambda: Discrete(()),
                                      lambda: Discrete((1, -2))])
    def test_invalid(self, make):
        with pytest.raises(InvalidLaw):
            make()

    def test_node_count_configurable(self):
        nodes, w = Uniform(1, 5).quadrature(16)
        assert nodes.size == 16 and w.sum() == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 10), st.floats(0.01, 10), st.floats(-5, 5), st.floats(-5, 5))
    def test_linear_and_normalized(self, lo, width, a, b):
        law = Uniform(lo, lo + width)
        assert expect_law(law, lambda s: np.ones_like(s)) == pytest.approx(1.0, rel=1e-14)
        f = lambda s: np.sin(s)  # noqa: E731
        g = lambda s: s**2  # noqa: E731
        lhs = expect_law(law, lambda s: a * f(s) + b * g(s))
        rhs = a * expect_law(law, f) + b * expect_law(law, g)
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(rhs))

    def test_scaled(self):
        assert Uniform(1, 5).scaled(2) == Uniform(2, 10)
        assert Discrete((1, 2)).scaled(3).values == (3.0, 6.0)


class TestSpec:
    def test_alpha_positive(self):
        with pytest.raises(DomainError):
            EnsembleSpec.row_variance(-1, UNIT)

    def test_rotations_only_for_kronecker(self):
        with pytest.raises(DomainError):
            EnsembleSpec(4, "row", rotate_rows=True)

    def test_mean_variance(self):
        spec = EnsembleSpec.kronecker(4, Uniform(1, 5), Uniform(0, 2))
        assert spec.v == pytest.approx(3.0)

    def test_realized_alpha(self):
        assert n_columns(2.5, 3) == 8
        assert EnsembleSpec.marchenko_pastur(2.5, 1).realized_alpha(3) == pytest.approx(8 / 3)


class TestFactors:
    def test_constant_row_law(self):
        f = build_covariance_factors(EnsembleSpec.row_variance(4, Constant(2)), 4, seed=0)
        np.testing.assert_array_equal(f.M, 2 * np.eye(4))
        np.testing.assert_array_equal(f.theta, np.eye(16))

    def test_diagonal_kronecker(self):
        spec = EnsembleSpec.kronecker(2, Uniform(1, 5), Uniform(0, 2))
        f = build_covariance_factors(spec, 10, seed=3)
        np.testing.assert_array_equal(f.M, np.diag(f.s_draws))
        np.testing.assert_array_equal(f.theta, np.diag(f.t_draws))
        assert f.s_draws.min() >= 1 and f.s_draws.max() <= 5

    def test_rotated_spectrum_matches_draws(self):
        spec = EnsembleSpec.kronecker(2, Uniform(1, 5), Uniform(0, 2), rotate_rows=True, rotate_cols=True)
        f = build_covariance_factors(spec, 50, seed=1)
        np.testing.assert_allclose(np.linalg.eigvalsh(f.M), np.sort(f.s_draws), atol=1e-8)
        np.testing.assert_allclose(np.linalg.eigvalsh(f.theta), np.sort(f.t_draws), atol=1e-8)
        np.testing.assert_allclose(f.m_diag, np.diag(f.M), atol=1e-12)

    def test_haar_is_orthogonal(self):
        q = haar_orthogonal(np.random.default_rng(0), 30)
        np.testing.assert_allclose(q @ q.T, np.eye(30), atol=1e-12)

    def test_haar_first_column_is_isotropic(self):
        # the squared first entry of a Haar column has mean 1/n
        rng = np.random.default_rng(5)
        vals = [haar_orthogonal(rng, 4)[0, 0] ** 2 for _ in range(4000)]
        assert np.mean(vals) == pytest.approx(0.25, abs=4 * np.std(vals) / np.sqrt(len(vals)))

    def test_small_n_rejected(self):
        with pytest.raises(DomainError):
            build_covariance_factors(EnsembleSpec.marchenko_pastur(4, 1), 1, seed=0)


class TestSampling:
    def test_deterministic(self):
        spec = EnsembleSpec.kronecker(4, Uniform(1, 5), Uniform(0, 2), True, True)
        a = sample_matrix(spec, 20, seed=9)
        b = sample_matrix(spec, 20, seed=9)
        np.testing.assert_array_equal(a.matrix, b.matrix)
        assert not np.array_equal(a.matrix, sample_matrix(spec, 20, seed=10).matrix)

    def test_shape_and_alpha(self):
        s = sample_matrix(EnsembleSpec.marchenko_pastur(2.5, 1), 10, seed=0)
        assert (s.n_rows, s.n_cols) == (10, 25)
        assert s.alpha == 2.5

    def test_entry_variance(self):
        s = sample_matrix(EnsembleSpec.row_variance(4, Constant(2)), 500, seed=0)
        assert s.n_cols == 2000
        assert np.mean(500 * s.matrix**2) == pytest.approx(2.0, abs=0.02)

    def test_rows_uncorrelated(self):
        s = sample_matrix(EnsembleSpec.kronecker(4, Uniform(1, 5), Uniform(0, 2)), 50, seed=2)
        x = s.matrix * np.sqrt(50)
        c = x[0] @ x[1] / x.shape[1]
        se = np.sqrt(np.mean((x[0] * x[1]) ** 2) / x.shape[1])
        assert abs(c) < 3 * se

    def test_second_moments_match_covariance(self):
        # E[N x_{i mu} x_{j nu}] = m_ij theta_{mu nu} on a small rotated instance
        spec = EnsembleSpec.kronecker(1.5, Uniform(1, 5), Uniform(0, 2), True, True)
        n, k = 4, 100_000
        f = sample_matrix(spec, n, seed=4).factors
        rng = np.random.default_rng(7)
        flat = np.stack([draw_matrix(f, rng).ravel() for _ in range(k)]) * np.sqrt(n)
        emp = flat.T @ flat / k
        target = np.kron(f.M, f.theta)
        se = np.sqrt(((flat[:, :, None] * flat[:, None, :]) ** 2).mean(0) / k)
        assert np.all(np.abs(emp - target) <= 4 * se + 1e-12)

    def test_negative_draw_rejected(self):
        f = build_covariance_factors(EnsembleSpec.marchenko_pastur(2, 1), 3, seed=0)
        f.s_draws[0] = -1.0
        with pytest.raises(InvalidLaw):
            draw_matrix(f, np.random.default_rng(0))

    def test_sampler_follows_factor_construction(self):
        spec = EnsembleSpec.kronecker(1.5, Uniform(1, 5), Uniform(0, 2), True, True)
        s = sample_matrix(spec, 6, seed=4)
        f = build_covariance_factors(spec, 6, seed=4)
        np.testing.assert_array_equal(s.factors.s_draws, f.s_draws)
        np.testing.assert_array_equal(s.M, f.M)

    def test_wishart_symmetric(self):
        w = sample_matrix(EnsembleSpec.marchenko_pastur(2, 1), 30, seed=0).wishart()
        np.testing.assert_array_equal(w, w.T)

    def test_mean_eigenvalue_trace_identity(self):
        spec = EnsembleSpec.kronecker(4, Uniform(1, 5), Uniform(0, 2))
        vals = [np.trace(sample_matrix(spec, 200, seed).wishart()) / 200 for seed in range(20)]
        se = np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(np.mean(vals) - 4 * spec.v) < 4 * se
