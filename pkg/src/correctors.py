"""First-order corrector, boundary layers, the error function and convergence metrics."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.ndimage import map_coordinates

from src.cell_problems import CorrectorSet, chi_sup_norm
from src.coefficients import CoefficientField, cell_samples, shifted_indices, sup_coefficient
from src.fem import domain_mesh
from src.grids import (
    DomainField,
    GridError,
    TwoScaleField,
    cell_average,
    finite_difference_gradient,
    gradient,
    h1_norm,
    integrate,
    nodal_l2_norm,
    two_scale_l2_norm,
    x_gradient,
)
from src.pde_solvers import check_resolution, solve_dirichlet_2d
from src.two_scale import apply_cell_shift, apply_cell_shift_adjoint, weak_limit_gap
from src.utils import run_indexed

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BoundaryLayerField:
    """Boundary layer v_eps on the translation slices.

    ``c_profile`` (1D only) is c_eps(y); ``harmonic_mean`` (1D only) is the
    translated harmonic mean 1/<1/a(y + ./eps)>_Omega per y.
    ``boundary_gap`` is the largest deviation from the imposed boundary data.
    """

    v: TwoScaleField
    c_profile: Optional[np.ndarray] = None
    harmonic_mean: Optional[np.ndarray] = None
    boundary_gap: float = 0.0
    boundary_max: float = 0.0


def _chi_per_node(cs: CorrectorSet, n_domain: int) -> np.ndarray:
    """chi broadcast to (n_domain, dim, n_cell)."""
    if cs.depends_on_x:
        return cs.chi
    return np.broadcast_to(cs.chi, (n_domain,) + cs.chi.shape[1:])


def first_order_corrector(u0: DomainField, cs: CorrectorSet) -> TwoScaleField:
    """
    u1(x, y) = grad u0(x) . chi(x, y).

    The y-gradient is always attached; the x-gradient only when u0 carries
    second derivatives and chi does not depend on x.
    """
    grid = u0.grid
    if grid.dim != cs.dim:
        raise GridError(f"u0 lives in dim {grid.dim}, correctors in dim {cs.dim}")
    g = gradient(u0)                                    # (n_d, dim)
    chi = _chi_per_node(cs, grid.n_nodes)               # (n_d, dim, n_c)
    chi_grad = cs.chi_grad if cs.depends_on_x else np.broadcast_to(
        cs.chi_grad, (grid.n_nodes,) + cs.chi_grad.shape[1:])

    values = np.einsum('ik,ikj->ij', g, chi)
    ygrad = np.einsum('ik,ikjd->ijd', g, chi_grad)
    grad = None
    if u0.hess is not None and not cs.depends_on_x:
        # d/dx_d u1 = sum_k (d_d d_k u0) chi_k
        grad = np.einsum('idk,ikj->ijd', u0.hess, chi)
    return TwoScaleField(grid, cs.cell_grid, values, grad, ygrad)


def _check_boundary_layer_coefficient(A: CoefficientField, dim: int):
    if A.dim != dim:
        raise ValueError(f"Expected a {dim}D coefficient, got dim={A.dim}")
    if A.depends_on_x:
        raise ValueError("Boundary layers need a coefficient A(y) independent of x")
    if not A.symmetric:
        raise ValueError("Boundary layers need a symmetric coefficient")


def boundary_layer_1d(u0: DomainField, cs: CorrectorSet, a: CoefficientField, eps: float) -> BoundaryLayerField:
    """
    Closed-form 1D boundary layer.

    v'(x, y) = c(y) / a(y + x/eps) with
    c(y) = [chi(y + w/eps) u0'(w) - chi(y) u0'(0)] / integral_0^w a^-1(y + t/eps) dt
    and v(0, y) = chi(y) u0'(0).

    Args:
        u0: Homogenized solution (its exact gradient is used when carried)
        cs: 1D correctors
        a: The coefficient the correctors were computed for
        eps: Grid-compatible scale

    Returns:
        BoundaryLayerField with c_profile and the translated harmonic mean
    """
    _check_boundary_layer_coefficient(a, 1)
    dgrid, cgrid = u0.grid, cs.cell_grid
    index = shifted_indices(dgrid, cgrid, eps, sign=+1)       # y_j + x_i/eps
    a_shift = cell_samples(a, cgrid)[:, 0, 0][index]          # (n_d, n_c)
    chi = cs.chi[0, 0]
    du0 = gradient(u0)[:, 0]

    left = chi * du0[0]
    right = chi[index[-1]] * du0[-1]
    x = dgrid.axis(0)
    D = cumulative_trapezoid(1.0 / a_shift, x, axis=0, initial=0.0)
    c = (right - left) / D[-1]

    values = left[None, :] + c[None, :] * D
    grad = (c[None, :] / a_shift)[..., None]
    gap = float(np.max(np.abs(np.concatenate([values[0] - left, values[-1] - right]))))
    v = TwoScaleField(dgrid, cgrid, values, grad)
    logger.debug(f"1D boundary layer at eps={eps:g}: max|c|={np.max(np.abs(c)):.6g}, boundary gap={gap:.2e}")
    return BoundaryLayerField(v=v, c_profile=c, harmonic_mean=dgrid.extents[0] / D[-1],
                              boundary_gap=gap,
                              boundary_max=float(np.max(np.abs(np.concatenate([left, right])))))


def _interpolate_periodic(cgrid, values: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear periodic interpolation of nodal cell values at points y (n, 2)."""
    grid_values = values.reshape(cgrid.shape)
    coords = (np.mod(y, 1.0) * cgrid.nodes_per_dim).T
    return map_coordinates(grid_values, coords, order=1, mode='grid-wrap')


def boundary_layer_2d(u0: DomainField,
                      cs: CorrectorSet,
                      A: CoefficientField,
                      eps: float,
                      tol: float = 1e-10,
                      max_workers: int = 1,
                      maxiter: Optional[int] = None) -> BoundaryLayerField:
    """
    FEM boundary layer per translation node: div(A(y_j + x/eps) grad v) = 0
    with v = u1(x, y_j + x/eps) on the boundary of Omega.

    chi is interpolated bilinearly on the cell grid at the boundary points.
    """
    _check_boundary_layer_coefficient(A, 2)
    dgrid, cgrid = u0.grid, cs.cell_grid
    check_resolution(dgrid, eps)
    boundary = dgrid.boundary_mask
    xb = dgrid.coordinates()[boundary]
    gb = gradient(u0)[boundary]                               # (n_b, 2)
    y_nodes = cgrid.coordinates()

    points = domain_mesh(dgrid).quadrature_points()

    def boundary_data(j):
        yb = y_nodes[j] + xb / eps
        chi_b = np.stack([_interpolate_periodic(cgrid, cs.chi[0, k], yb) for k in range(2)], axis=-1)
        return np.sum(gb * chi_b, axis=-1)

    def solve_slice(j):
        data = boundary_data(j)
        a_quad = A.matrices(points, y_nodes[j] + points / eps)
        v = solve_dirichlet_2d(a_quad, 0.0, dgrid, tol=tol, boundary_values=data, maxiter=maxiter)
        return v.values, data

    slices = run_indexed(solve_slice, list(range(cgrid.n_nodes)), max_workers=max_workers,
                         label=f'boundary layer (eps={eps:g})')
    values = np.stack([s[0] for s in slices], axis=1)
    data = np.stack([s[1] for s in slices], axis=1)
    gap = float(np.max(np.abs(values[boundary] - data))) if data.size else 0.0
    boundary_max = float(np.max(np.abs(data))) if data.size else 0.0
    logger.debug(f"2D boundary layer at eps={eps:g}: max|data|={boundary_max:.6g}")
    return BoundaryLayerField(v=TwoScaleField(dgrid, cgrid, values), boundary_gap=gap,
                              boundary_max=boundary_max)


def error_function(u_eps: TwoScaleField,
                   u0: Union[DomainField, TwoScaleField],
                   u1: TwoScaleField,
                   v: TwoScaleField,
                   eps: float) -> TwoScaleField:
    """
    e = u_eps - u0 - eps [u1(x, y + x/eps) - v].

    Exact x-gradients propagate when every input carries one.
    """
    if isinstance(u0, DomainField):
        u0 = TwoScaleField.from_domain(u0, u_eps.cell_grid)
    shifted_u1 = apply_cell_shift_adjoint(u1, eps)
    return u_eps - u0 - eps * (shifted_u1 - v)


def error_gradient_norm(e: TwoScaleField) -> float:
    """||grad_x e|| over Omega x Y."""
    return two_scale_l2_norm(e.domain_grid, x_gradient(e))


def corrector_h1_gap(u_eps: TwoScaleField, u0: DomainField) -> float:
    """H1 norm of <u_eps>_Y - u0."""
    return h1_norm(cell_average(u_eps) - u0, exact=True)


def _averaged_gradient(u: TwoScaleField) -> np.ndarray:
    # differentiation commutes with the cell mean
    return gradient(cell_average(u))


def avg_grad_error(u_eps: TwoScaleField, u0: DomainField) -> float:
    """||<grad u_eps>_Y - grad u0|| over Omega."""
    return nodal_l2_norm(u0.grid, _averaged_gradient(u_eps) - gradient(u0))


def bl_corrected_error(u_eps: TwoScaleField, u0: DomainField, v: TwoScaleField, eps: float) -> float:
    """||<grad u_eps + eps grad v>_Y - grad u0||, i.e. ||<grad e_eps>_Y||."""
    diff = _averaged_gradient(u_eps) + eps * _averaged_gradient(v) - gradient(u0)
    return nodal_l2_norm(u0.grid, diff)


def strong_gradient_gap(u_eps: TwoScaleField, u0: DomainField, u1: TwoScaleField, eps: float) -> float:
    """||F_eps(grad u_eps) - (grad u0 + grad_y u1)|| over Omega x Y."""
    grad_field = TwoScaleField(u_eps.domain_grid, u_eps.cell_grid, x_gradient(u_eps))
    shifted = apply_cell_shift(grad_field, eps).values
    target = gradient(u0)[:, None, :] + u1.ygrad
    return two_scale_l2_norm(u_eps.domain_grid, shifted - target)


def energy_gap(u_eps: TwoScaleField, u0: DomainField, source) -> float:
    """|integral of f u_eps over Omega x Y - integral of f u0 over Omega|."""
    grid = u0.grid
    f = np.broadcast_to(np.asarray(source(grid.coordinates()), dtype=float), (grid.n_nodes,))
    lhs = integrate(TwoScaleField(grid, u_eps.cell_grid, f[:, None] * u_eps.values))
    rhs = integrate(DomainField(grid, f * u0.values))
    return abs(lhs - rhs)


def ramp_test_function(extents) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """psi(x, y) = prod_d (x_d / w_d) cos(2 pi y_1).

    Not invariant under (x, y) -> (w - x, -y). Test functions that are, such as
    sin(pi x) cos(2 pi y), pair to exactly zero against the gradient gap of a
    symmetric problem (even coefficient, constant source).
    """
    extents = np.asarray(extents, dtype=float)

    def psi(x, y):
        return np.prod(x / extents, axis=-1) * np.cos(2.0 * np.pi * y[..., 0])
    return psi


def weak_gradient_gap(u_eps: TwoScaleField, u0: DomainField, u1: TwoScaleField,
                      eps: float, direction: int = 0,
                      psi: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None) -> float:
    """
    |<F_eps d_k u_eps, psi> - integral (d_k u0 + d_yk u1) psi|.

    ``psi`` defaults to ``ramp_test_function`` on the domain extents.
    """
    dgrid, cgrid = u_eps.domain_grid, u_eps.cell_grid
    psi = psi or ramp_test_function(dgrid.extents)
    psi_field = TwoScaleField.from_function(dgrid, cgrid, psi)
    du = TwoScaleField(dgrid, cgrid, x_gradient(u_eps)[..., direction])
    limit = gradient(u0)[:, None, direction] + u1.ygrad[..., direction]
    return weak_limit_gap(du, psi_field, TwoScaleField(dgrid, cgrid, limit), eps)


def bound_constant(a: CoefficientField, cs: CorrectorSet) -> float:
    """|a|_inf |chi|_inf / alpha from node sup-norms."""
    return sup_coefficient(a, cs.cell_grid) * chi_sup_norm(cs) / a.alpha


def bound_rhs_1d(a: CoefficientField, cs: CorrectorSet, u0: DomainField, eps: float) -> float:
    """
    2 eps (|a|_inf |chi|_inf / alpha) (|u0'|_inf + ||u0''||).

    Uses the carried u0'' when present, finite differences of u0' otherwise.
    """
    du0 = gradient(u0)
    d2u0 = u0.hess if u0.hess is not None else finite_difference_gradient(u0.grid, du0)
    return 2.0 * eps * bound_constant(a, cs) * (float(np.max(np.abs(du0))) + nodal_l2_norm(u0.grid, d2u0))


def error_function_bound_1d(a: CoefficientField, cs: CorrectorSet, u0: DomainField, eps: float) -> float:
    """eps (|a|_inf |chi|_inf / alpha) ||u0''||, the bound on ||e_eps'|| over Omega x Y."""
    d2u0 = u0.hess if u0.hess is not None else finite_difference_gradient(u0.grid, gradient(u0))
    return eps * bound_constant(a, cs) * nodal_l2_norm(u0.grid, d2u0)


def boundary_layer_bound_1d(a: CoefficientField, cs: CorrectorSet, u0: DomainField) -> float:
    """(2 / alpha) |a|_inf |chi|_inf |u0'|_inf, the uniform bound on ||v_eps'||."""
    return 2.0 * bound_constant(a, cs) * float(np.max(np.abs(gradient(u0))))


def boundary_layer_gradient_norm(bl: BoundaryLayerField) -> float:
    """||grad_x v|| over Omega x Y."""
    return two_scale_l2_norm(bl.v.domain_grid, x_gradient(bl.v))
