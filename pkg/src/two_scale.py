"""The discrete eps-cell shift operator, its adjoint, pairings and two-scale diagnostics.

Under a grid-compatible eps every shift is a cyclic permutation of the
cell nodes of each y-slice, so the operators below never interpolate.
"""

import logging
from typing import Callable

import numpy as np

from src.coefficients import shifted_indices
from src.grids import (
    DomainGrid,
    PeriodicGrid,
    TwoScaleField,
    check_same_grids,
    integrate,
    l2_norm,
)

logger = logging.getLogger(__name__)

AnalyticField = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _permute(values: np.ndarray, index: np.ndarray) -> np.ndarray:
    """values[i, index[i, j], ...] for every (i, j)."""
    full_index = index.reshape(index.shape + (1,) * (values.ndim - 2))
    full_index = np.broadcast_to(full_index, index.shape + values.shape[2:])
    return np.take_along_axis(values, full_index, axis=1)


def _shift(u: TwoScaleField, eps: float, sign: int) -> TwoScaleField:
    # sign = -1: u(x, y - x/eps); sign = +1: u(x, y + x/eps)
    index = shifted_indices(u.domain_grid, u.cell_grid, eps, sign=sign)
    values = _permute(u.values, index)
    ygrad = None if u.ygrad is None else _permute(u.ygrad, index)
    grad = None
    if u.grad is not None and ygrad is not None:
        grad = _permute(u.grad, index) + (sign / eps) * ygrad
    return TwoScaleField(u.domain_grid, u.cell_grid, values, grad, ygrad)


def apply_cell_shift(u: TwoScaleField, eps: float) -> TwoScaleField:
    """F_eps: u(x, y) -> u(x, y - x/eps)."""
    return _shift(u, eps, sign=-1)


def apply_cell_shift_adjoint(u: TwoScaleField, eps: float) -> TwoScaleField:
    """F_eps*: u(x, y) -> u(x, y + x/eps), the inverse permutation of F_eps."""
    return _shift(u, eps, sign=+1)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise inner product over trailing component axes."""
    prod = a * b
    if prod.ndim > 2:
        prod = prod.reshape(prod.shape[:2] + (-1,)).sum(axis=-1)
    return prod


def two_scale_pairing(u: TwoScaleField, psi: TwoScaleField, eps: float) -> float:
    """Integral over Omega x Y of F_eps(u) . psi."""
    check_same_grids(u, psi)
    shifted = apply_cell_shift(u, eps)
    product = TwoScaleField(u.domain_grid, u.cell_grid, _dot(shifted.values, psi.values))
    return integrate(product)


def strong_two_scale_error(u: TwoScaleField, u0: TwoScaleField, eps: float) -> float:
    """L2(Omega x Y) distance between F_eps(u) and the candidate limit u0."""
    check_same_grids(u, u0)
    shifted = apply_cell_shift(u, eps)
    return l2_norm(TwoScaleField(u.domain_grid, u.cell_grid, shifted.values - u0.values))


def weak_limit_gap(u: TwoScaleField, psi: TwoScaleField, w: TwoScaleField, eps: float) -> float:
    """|<F_eps u, psi> - integral of w psi| for a family claimed to converge weakly to w."""
    check_same_grids(u, w)
    limit = integrate(TwoScaleField(w.domain_grid, w.cell_grid, _dot(w.values, psi.values)))
    return abs(two_scale_pairing(u, psi, eps) - limit)


def commutation_defect(psi: AnalyticField,
                       dpsi_dx: AnalyticField,
                       dpsi_dy: AnalyticField,
                       test: AnalyticField,
                       dtest_dx: AnalyticField,
                       eps: float,
                       dgrid: DomainGrid,
                       cgrid: PeriodicGrid,
                       direction: int = 0) -> float:
    """
    Quadrature defect of d/dx_k F_eps(psi) = F_eps(d psi/dx_k) - (1/eps) F_eps(d psi/dy_k).

    The left side is taken in weak form against ``test``, which must vanish
    on the boundary of Omega, so that only analytic derivatives enter.

    Args:
        psi, dpsi_dx, dpsi_dy: psi(x, y) and its k-th partial derivatives
        test, dtest_dx: test function and its k-th x-derivative
        eps: Grid-compatible scale
        dgrid, cgrid: Domain and cell grids
        direction: Index k of the derivative

    Returns:
        Absolute difference of both sides after quadrature
    """
    def sample(func):
        return TwoScaleField.from_function(dgrid, cgrid, func)

    shifted = apply_cell_shift(sample(psi), eps).values
    shifted_dx = apply_cell_shift(sample(dpsi_dx), eps).values
    shifted_dy = apply_cell_shift(sample(dpsi_dy), eps).values
    phi = sample(test).values
    dphi = sample(dtest_dx).values

    lhs = -integrate(TwoScaleField(dgrid, cgrid, shifted * dphi))
    rhs = integrate(TwoScaleField(dgrid, cgrid, (shifted_dx - shifted_dy / eps) * phi))
    defect = abs(lhs - rhs)
    logger.debug(f"Commutation defect (direction {direction}, eps={eps:g}, "
                 f"N={dgrid.nodes_per_dim}): {defect:.3e}")
    return defect
