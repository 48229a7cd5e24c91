"""Tests for the coefficient catalog and shifted sampling."""

import numpy as np
import pytest

from src.coefficients import (
    EllipticityError,
    GridCompatibilityError,
    ellipticity_bounds,
    evaluate,
    make_coefficient,
    shift_steps,
    shifted_sample,
    sup_coefficient,
)
from src.grids import build_domain_grid, build_periodic_grid


class TestCatalog:
    """Test cases for catalog coefficients."""

    def test_constant(self):
        """Test that the constant entry returns c I everywhere."""
        A = make_coefficient('constant', {'value': 5.0})

        np.testing.assert_array_equal(evaluate(A, [0.3], [0.7]), [[5.0]])

    def test_cosine_at_origin(self):
        """Test 2 + cos(0) = 3."""
        A = make_coefficient('cosine1d', {'base': 2, 'amp': 1, 'freq': 1})

        assert evaluate(A, [0.0], [0.0])[0, 0] == pytest.approx(3.0)

    def test_cosine_periodicity(self):
        """Test that y and y + 1 give the same value."""
        A = make_coefficient('cosine1d', {})

        assert evaluate(A, [0.5], [0.25])[0, 0] == pytest.approx(evaluate(A, [0.5], [1.25])[0, 0], abs=1e-15)

    def test_laminate_is_diagonal(self):
        """Test the laminate catalog entry."""
        A = make_coefficient('laminate2d', {'base': 2, 'amp': 1}, dim=2)

        mat = evaluate(A, [0.1, 0.2], [0.5, 0.3])

        np.testing.assert_allclose(mat, np.eye(2), atol=1e-15)

    def test_x_outside_domain(self):
        """Test that evaluation outside the domain closure is rejected."""
        A = make_coefficient('cosine1d', {})

        with pytest.raises(ValueError, match="outside the domain"):
            evaluate(A, [1.5], [0.0])

    def test_unknown_id(self):
        """Test that unknown catalog ids are rejected."""
        with pytest.raises(ValueError, match="Unknown catalog id"):
            make_coefficient('marble', {})

    def test_non_integer_frequency(self):
        """Test that non-integer frequencies break periodicity and are rejected."""
        with pytest.raises(ValueError, match="freq"):
            make_coefficient('cosine1d', {'freq': 1.5})

    def test_expression_coefficient(self):
        """Test an expression coefficient with x dependence."""
        A = make_coefficient('expr', {'expr': '2 + x1*cos(2*pi*y1)'}, extents=[1.0])

        assert A.depends_on_x
        assert evaluate(A, [0.5], [0.0])[0, 0] == pytest.approx(2.5)

    def test_matrix_expression_symmetry(self):
        """Test that matrix expressions detect asymmetry."""
        sym = make_coefficient('expr', {'expr': [['2', '0.5'], ['0.5', '2']]}, dim=2)
        asym = make_coefficient('expr', {'expr': [['2', '0.5'], ['-0.5', '2']]}, dim=2)

        assert sym.symmetric
        assert not asym.symmetric
        assert asym.alpha == pytest.approx(2.0)

    def test_expression_dimension(self):
        """Test that y2 is not available in 1D."""
        with pytest.raises(ValueError, match="not available"):
            make_coefficient('expr', {'expr': '2 + y2'})


class TestEllipticity:
    """Test cases for sampled ellipticity bounds."""

    def test_constant(self):
        """Test the bounds of a constant coefficient."""
        A = make_coefficient('constant', {'value': 5.0})

        assert (A.alpha, A.beta) == (5.0, 5.0)

    def test_cosine(self):
        """Test (1, 3) for 2 + cos 2 pi y."""
        A = make_coefficient('cosine1d', {'base': 2, 'amp': 1}, samples=256)

        assert A.alpha == pytest.approx(1.0, abs=1e-3)
        assert A.beta == pytest.approx(3.0, abs=1e-3)

    def test_not_elliptic(self):
        """Test that base 0.5, amp 1 is rejected."""
        with pytest.raises(EllipticityError, match="not uniformly elliptic"):
            make_coefficient('cosine1d', {'base': 0.5, 'amp': 1})

    def test_expression_not_elliptic(self):
        """Test that cos(2 pi y1) alone is rejected."""
        with pytest.raises(EllipticityError):
            make_coefficient('expr', {'expr': 'cos(2*pi*y1)'})

    def test_resampling(self):
        """Test that a finer lattice keeps the cosine bounds and that one sample is refused."""
        A = make_coefficient('cosine1d', {'base': 2, 'amp': 1})

        alpha, beta = ellipticity_bounds(A, 512)

        assert alpha == pytest.approx(1.0, abs=1e-4)
        assert beta == pytest.approx(3.0, abs=1e-12)
        with pytest.raises(ValueError, match="at least 2 samples"):
            ellipticity_bounds(A, 1)


class TestShiftedSample:
    """Test cases for grid compatibility and shifted sampling."""

    @pytest.fixture
    def grids(self):
        """Create compatible 1D grids."""
        return build_domain_grid(1, [1.0], 33), build_periodic_grid(1, 32)

    def test_constant_is_unchanged(self, grids):
        """Test that a constant coefficient samples to itself."""
        dgrid, cgrid = grids
        A = make_coefficient('constant', {'value': 2.5})

        field = shifted_sample(A, 0.25, dgrid, cgrid)

        np.testing.assert_array_equal(field.values, np.full((33, 32, 1, 1), 2.5))

    def test_zero_shift_at_origin(self, grids):
        """Test that the row x = 0 is the unshifted cell sample."""
        dgrid, cgrid = grids
        A = make_coefficient('cosine1d', {})

        field = shifted_sample(A, 1.0, dgrid, cgrid)

        expected = 2 + np.cos(2 * np.pi * cgrid.axis())
        np.testing.assert_allclose(field.values[0, :, 0, 0], expected, atol=1e-15)

    def test_direct_substitution(self, grids):
        """Test a(1/8 / (1/4)) = 2 + cos(pi) = 1 at y = 0."""
        dgrid, cgrid = grids
        A = make_coefficient('cosine1d', {})
        node = 4                                   # x = 1/8

        field = shifted_sample(A, 0.25, dgrid, cgrid)

        assert dgrid.axis(0)[node] == pytest.approx(0.125)
        assert field.values[node, 0, 0, 0] == pytest.approx(1.0, abs=1e-14)

    def test_steps_congruent_mod_M_sample_alike(self, grids):
        """Test that eps = 1/4 and eps = 1/36 (steps 4 and 36 = 4 mod 32) sample identically."""
        dgrid, cgrid = grids
        A = make_coefficient('cosine1d', {})

        np.testing.assert_array_equal(
            shifted_sample(A, 1 / 36, dgrid, cgrid).values, shifted_sample(A, 0.25, dgrid, cgrid).values)

    def test_equal_steps_on_different_grids(self, grids):
        """Test that N = 33, eps = 1/4 and N = 65, eps = 1/8 share rows through the shared steps."""
        dgrid, cgrid = grids
        fine = build_domain_grid(1, [1.0], 65)
        A = make_coefficient('product', {'base': 2, 'amp': 0.5})

        coarse_field = shifted_sample(A, 0.25, dgrid, cgrid)
        fine_field = shifted_sample(A, 0.125, fine, cgrid)

        np.testing.assert_array_equal(shift_steps(fine, cgrid, 0.125)[:33], shift_steps(dgrid, cgrid, 0.25))
        np.testing.assert_array_equal(fine_field.values[:33], coarse_field.values)

    def test_steps_are_integer_multiples(self, grids):
        """Test s = M / (eps (N - 1)) per grid interval."""
        dgrid, cgrid = grids

        steps = shift_steps(dgrid, cgrid, 0.25)

        np.testing.assert_array_equal(steps[:, 0], 4 * np.arange(33))

    def test_incompatible_eps(self):
        """Test eps = 1/7 with N - 1 = 256, M = 16."""
        dgrid, cgrid = build_domain_grid(1, [1.0], 257), build_periodic_grid(1, 16)

        with pytest.raises(GridCompatibilityError, match="epsilon not grid-compatible"):
            shift_steps(dgrid, cgrid, 1 / 7)
        assert shift_steps(dgrid, cgrid, 1 / 16)[-1, 0] == 256

    def test_sup_coefficient(self, grids):
        """Test the node sup of 2 + cos."""
        _, cgrid = grids

        assert sup_coefficient(make_coefficient('cosine1d', {}), cgrid) == pytest.approx(3.0)
