"""Tests for the eps-cell shift operator and two-scale diagnostics."""

import numpy as np
import pytest

from src.coefficients import GridCompatibilityError
from src.grids import TwoScaleField, build_domain_grid, build_periodic_grid, l2_norm
from src.two_scale import (
    apply_cell_shift,
    apply_cell_shift_adjoint,
    commutation_defect,
    strong_two_scale_error,
    two_scale_pairing,
    weak_limit_gap,
)


def _cos(x, y):
    return np.cos(2 * np.pi * y[..., 0])


class TestCellShift:
    """Test cases for F_eps and its adjoint."""

    @pytest.fixture
    def grids(self):
        """Create 1D grids with a shift of 1/eps cell nodes per interval."""
        return build_domain_grid(1, [1.0], 33), build_periodic_grid(1, 32)

    def test_y_independent_field_unchanged(self, grids):
        """Test that the shift acts only in y."""
        dgrid, cgrid = grids
        u = TwoScaleField.from_function(dgrid, cgrid, lambda x, y: np.sin(3 * x[..., 0]))

        np.testing.assert_array_equal(apply_cell_shift(u, 0.25).values, u.values)

    def test_unshifts_oscillating_profile(self, grids):
        """Test F_eps[g(x) phi(y + x/eps)] = g(x) phi(y) exactly on nodes."""
        dgrid, cgrid = grids
        eps = 0.25
        shifted = TwoScaleField.from_function(
            dgrid, cgrid, lambda x, y: x[..., 0] * _cos(x, y + x / eps))
        target = TwoScaleField.from_function(dgrid, cgrid, lambda x, y: x[..., 0] * _cos(x, y))

        np.testing.assert_allclose(apply_cell_shift(shifted, eps).values, target.values, atol=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_isometry_and_exact_inverse(self, grids, seed):
        """Test ||F u|| = ||u|| and F* F u = u bitwise on random fields."""
        dgrid, cgrid = grids
        rng = np.random.default_rng(seed)
        eps = [1.0, 0.5, 0.25, 0.125, 1 / 16][seed % 5]
        u = TwoScaleField(dgrid, cgrid, rng.standard_normal((dgrid.n_nodes, cgrid.n_nodes)))

        shifted = apply_cell_shift(u, eps)

        assert abs(l2_norm(shifted) - l2_norm(u)) <= 1e-13
        assert np.array_equal(apply_cell_shift_adjoint(shifted, eps).values, u.values)
        assert np.array_equal(apply_cell_shift(apply_cell_shift_adjoint(u, eps), eps).values, u.values)

    def test_pairing_identity(self, grids):
        """Test <F u, psi> = <u, F* psi>."""
        dgrid, cgrid = grids
        rng = np.random.default_rng(7)
        u = TwoScaleField(dgrid, cgrid, rng.standard_normal((dgrid.n_nodes, cgrid.n_nodes)))
        psi = TwoScaleField(dgrid, cgrid, rng.standard_normal((dgrid.n_nodes, cgrid.n_nodes)))

        lhs = two_scale_pairing(u, psi, 0.25)
        adjoint = apply_cell_shift_adjoint(psi, 0.25)
        rhs = float(dgrid.weights @ (u.values * adjoint.values).mean(axis=1))

        assert lhs == pytest.approx(rhs, abs=1e-13)

    def test_shift_carries_gradients(self, grids):
        """Test d/dx F*(u) = F*(grad u) + (1/eps) F*(grad_y u)."""
        dgrid, cgrid = grids
        n_d, n_c = dgrid.n_nodes, cgrid.n_nodes
        u = TwoScaleField(dgrid, cgrid, np.zeros((n_d, n_c)),
                          grad=np.ones((n_d, n_c, 1)), ygrad=np.full((n_d, n_c, 1), 2.0))

        out = apply_cell_shift_adjoint(u, 0.25)

        np.testing.assert_allclose(out.grad, np.full((n_d, n_c, 1), 9.0))

    def test_incompatible_eps(self, grids):
        """Test that a non-integer shift is rejected."""
        dgrid, cgrid = grids
        u = TwoScaleField(dgrid, cgrid, np.zeros((dgrid.n_nodes, cgrid.n_nodes)))

        with pytest.raises(GridCompatibilityError):
            apply_cell_shift(u, 0.3)


class TestPairing:
    """Test cases for pairings and limit gaps."""

    @pytest.fixture
    def grids(self):
        """Create compatible 1D grids."""
        return build_domain_grid(1, [1.0], 33), build_periodic_grid(1, 32)

    def test_unit_functions(self, grids):
        """Test <1, 1> = |Omega|."""
        dgrid, cgrid = grids
        one = TwoScaleField(dgrid, cgrid, np.ones((dgrid.n_nodes, cgrid.n_nodes)))

        assert two_scale_pairing(one, one, 0.25) == pytest.approx(1.0, abs=1e-14)

    def test_cosine_squared(self, grids):
        """Test <F phi(y + x/eps), phi(y)> = 1/2 for phi = cos 2 pi y."""
        dgrid, cgrid = grids
        eps = 0.25
        u = TwoScaleField.from_function(dgrid, cgrid, lambda x, y: _cos(x, y + x / eps))
        psi = TwoScaleField.from_function(dgrid, cgrid, _cos)

        assert two_scale_pairing(u, psi, eps) == pytest.approx(0.5, abs=1e-12)

    def test_orthogonal_modes(self, grids):
        """Test that sin and cos modes pair to zero."""
        dgrid, cgrid = grids
        u = TwoScaleField.from_function(dgrid, cgrid, lambda x, y: np.sin(2 * np.pi * y[..., 0]))
        psi = TwoScaleField.from_function(dgrid, cgrid, _cos)

        assert abs(two_scale_pairing(u, psi, 1.0)) <= 1e-13

    def test_strong_error_of_exact_construction(self, grids):
        """Test that u = u0(x, y + x/eps) has zero strong error."""
        dgrid, cgrid = grids
        eps = 0.25
        u = TwoScaleField.from_function(
            dgrid, cgrid, lambda x, y: (1 + x[..., 0]) * _cos(x, y + x / eps))
        u0 = TwoScaleField.from_function(dgrid, cgrid, lambda x, y: (1 + x[..., 0]) * _cos(x, y))

        assert strong_two_scale_error(u, u0, eps) == pytest.approx(0.0, abs=1e-12)

    def test_strong_error_by_brute_force(self, grids):
        """Test the strong error of an unoscillating y-dependent field against direct quadrature."""
        dgrid, cgrid = grids
        eps = 0.25
        u0 = TwoScaleField.from_function(dgrid, cgrid, _cos)
        x = dgrid.axis(0)[:, None]
        y = cgrid.axis()[None, :]
        diff = np.cos(2 * np.pi * (y - x / eps)) - np.cos(2 * np.pi * y)
        expected = np.sqrt(dgrid.weights @ (diff ** 2).mean(axis=1))

        error = strong_two_scale_error(u0, u0, eps)

        assert error > 0.1
        assert error == pytest.approx(expected, abs=1e-12)

    def test_strong_error_against_zero(self, grids):
        """Test that a zero limit gives the norm of u."""
        dgrid, cgrid = grids
        rng = np.random.default_rng(3)
        u = TwoScaleField(dgrid, cgrid, rng.standard_normal((dgrid.n_nodes, cgrid.n_nodes)))
        zero = TwoScaleField(dgrid, cgrid, np.zeros((dgrid.n_nodes, cgrid.n_nodes)))

        assert strong_two_scale_error(u, zero, 0.25) == pytest.approx(l2_norm(u), abs=1e-13)

    def test_weak_limit_gap_of_exact_limit(self, grids):
        """Test a zero gap when the family is the shifted limit itself."""
        dgrid, cgrid = grids
        eps = 0.125
        u = TwoScaleField.from_function(dgrid, cgrid, lambda x, y: _cos(x, y + x / eps))
        w = TwoScaleField.from_function(dgrid, cgrid, _cos)
        psi = TwoScaleField.from_function(dgrid, cgrid, lambda x, y: np.sin(np.pi * x[..., 0]) * _cos(x, y))

        assert weak_limit_gap(u, psi, w, eps) == pytest.approx(0.0, abs=1e-12)


class TestCommutation:
    """Test cases for the derivative commutation identity."""

    def test_defect_at_roundoff(self):
        """Test that the trapezoid rule keeps the identity exact at every compatible N."""
        eps = 0.25

        def psi(x, y):
            return np.sin(np.pi * x[..., 0]) * np.cos(2 * np.pi * y[..., 0])

        def dpsi_dx(x, y):
            return np.pi * np.cos(np.pi * x[..., 0]) * np.cos(2 * np.pi * y[..., 0])

        def dpsi_dy(x, y):
            return -2 * np.pi * np.sin(np.pi * x[..., 0]) * np.sin(2 * np.pi * y[..., 0])

        def test(x, y):
            return np.sin(np.pi * x[..., 0]) ** 2 * np.cos(2 * np.pi * y[..., 0])

        def dtest(x, y):
            return np.pi * np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * y[..., 0])

        for n in (33, 65, 129):
            dgrid, cgrid = build_domain_grid(1, [1.0], n), build_periodic_grid(1, 32)

            assert commutation_defect(psi, dpsi_dx, dpsi_dy, test, dtest, eps, dgrid, cgrid) <= 1e-13
