"""Dirichlet solvers for the homogenized problem and the translated oscillating family."""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from src.cell_problems import CorrectorSet
from src.coefficients import CoefficientField, EllipticityError, shift_steps, shifted_sample
from src.expressions import parse_expression
from src.fem import assemble_load, assemble_stiffness, domain_mesh, nodal_to_quadrature, solve_dirichlet_system
from src.grids import (
    DomainField,
    DomainGrid,
    PeriodicGrid,
    TwoScaleField,
    build_domain_grid,
    build_periodic_grid,
    nodal_l2_norm,
    two_scale_l2_norm,
    x_gradient,
)
from src.utils import run_indexed

logger = logging.getLogger(__name__)

# Oscillating solves are trusted only with at least this many grid intervals per eps.
NODES_PER_EPS = 8


class SliceSolveError(RuntimeError):
    """Raised when the solve for one translation node y_j fails."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class SourceTerm:
    """Right-hand side f(x) of the Dirichlet problems."""

    kind: str
    parameters: Dict[str, Any]
    func: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.func(x), dtype=float), x.shape[:-1])


def make_source(kind: str, parameters: Optional[Dict[str, Any]], dim: int,
                extents: Sequence[float]) -> SourceTerm:
    """
    Build a source from the catalog: constant, sine_product or expr.

    Args:
        kind: Catalog id
        parameters: Catalog parameters
        dim: Spatial dimension
        extents: Domain extents (sine_product vanishes on the box boundary)
    """
    parameters = dict(parameters or {})
    extents = np.asarray(extents, dtype=float)
    if kind == 'constant':
        value = float(parameters.get('value', 1.0))
        func = lambda x: np.full(x.shape[:-1], value)
    elif kind == 'sine_product':
        amplitude = float(parameters.get('amplitude', 1.0))
        func = lambda x: amplitude * np.prod(np.sin(np.pi * x / extents), axis=-1)
    elif kind == 'expr':
        if 'expr' not in parameters:
            raise ValueError("expr source needs an 'expr' entry")
        expression = parse_expression(str(parameters['expr']))
        if expression.uses('y'):
            raise ValueError("Source expressions may only use x1, x2")
        for name in expression.variables:
            if int(name[1]) > dim:
                raise ValueError(f"Variable {name} not available in dimension {dim}")
        func = lambda x: expression(x, np.zeros_like(x))
    else:
        raise ValueError(f"Unknown source kind {kind!r}; expected constant, sine_product or expr")
    return SourceTerm(kind, parameters, func)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """A fully validated run description."""

    dim: int
    extents: Tuple[float, ...]
    N: int
    M: int
    My: int
    eps_list: Tuple[float, ...]
    coefficient: CoefficientField
    source: SourceTerm
    cg_tol: float = 1e-10
    out: Optional[str] = None
    format: str = 'csv'
    cg_max_iter: Optional[int] = None
    workers: Optional[int] = None
    coefficient_config: Dict[str, Any] = field(default_factory=dict)
    source_config: Dict[str, Any] = field(default_factory=dict)

    def domain_grid(self) -> DomainGrid:
        return build_domain_grid(self.dim, self.extents, self.N)

    def cell_grid(self) -> PeriodicGrid:
        return build_periodic_grid(self.dim, self.M)

    def echo(self) -> Dict[str, Any]:
        """Plain-data view for reports."""
        return {
            'dim': self.dim,
            'extents': list(self.extents),
            'N': self.N,
            'M': self.M,
            'My': self.My,
            'eps_list': list(self.eps_list),
            'coefficient': dict(self.coefficient_config),
            'source': dict(self.source_config),
            'cg_tol': self.cg_tol,
        }


def _source_nodes(f: Union[Callable, np.ndarray, float], grid: DomainGrid) -> np.ndarray:
    if callable(f):
        return np.broadcast_to(np.asarray(f(grid.coordinates()), dtype=float), (grid.n_nodes,))
    return np.broadcast_to(np.asarray(f, dtype=float), (grid.n_nodes,))


def _integrate_divergence_form(a_line: np.ndarray, F: np.ndarray, x: np.ndarray,
                               left: float, right: float) -> Tuple[np.ndarray, np.ndarray]:
    """u, u' for -(a u')' = f with u(0) = left, u(w) = right, given F = cumulative f."""
    inv = 1.0 / a_line
    flux_const = (right - left + trapezoid(F * inv, x)) / trapezoid(inv, x)
    grad = (flux_const - F) * inv
    values = left + cumulative_trapezoid(grad, x, initial=0.0)
    # Pin the right end to its datum; the trapezoid sum hits it up to rounding.
    values[-1] = right
    return values, grad


def solve_dirichlet_1d(a_line: np.ndarray,
                       f: Union[Callable, np.ndarray, float],
                       grid: DomainGrid,
                       boundary_values: Tuple[float, float] = (0.0, 0.0)) -> DomainField:
    """
    Exact divergence-form solve of -(a u')' = f on (0, w).

    u(x) = u(0) + integral_0^x (C - F(t)) / a(t) dt with F the antiderivative of
    f and C fixed by the right boundary value, all by trapezoid quadrature.

    Args:
        a_line: Coefficient samples per node
        f: Source callable, nodal array or scalar
        grid: One-dimensional domain grid
        boundary_values: (u(0), u(w))

    Returns:
        DomainField carrying the nodal gradient (C - F)/a
    """
    if grid.dim != 1:
        raise ValueError("solve_dirichlet_1d needs a one-dimensional grid")
    a_line = np.broadcast_to(np.asarray(a_line, dtype=float), (grid.n_nodes,))
    if np.any(a_line <= 0):
        raise ValueError("nonpositive coefficient in 1D Dirichlet solve")
    x = grid.axis(0)
    F = cumulative_trapezoid(_source_nodes(f, grid), x, initial=0.0)
    values, grad = _integrate_divergence_form(a_line, F, x, *boundary_values)
    return DomainField(grid, values, grad[:, None])


def _quadrature_coefficient(A: np.ndarray, grid: DomainGrid, mesh) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape == (2, 2):
        return np.broadcast_to(A, (mesh.n_elements, 4, 2, 2))
    if A.ndim == 3 and A.shape[0] == grid.n_nodes:
        return nodal_to_quadrature(mesh, A)
    if A.shape == (mesh.n_elements, 4, 2, 2):
        return A
    raise ValueError(f"Cannot interpret coefficient array of shape {A.shape} on {grid.shape} grid")


def solve_dirichlet_2d(A: np.ndarray,
                       f: Union[Callable, np.ndarray, float],
                       grid: DomainGrid,
                       tol: float = 1e-10,
                       boundary_values: Optional[np.ndarray] = None,
                       maxiter: Optional[int] = None) -> DomainField:
    """
    Bilinear FEM for -div(A grad u) = f with Dirichlet data on the box boundary.

    Args:
        A: Constant (2, 2) matrix, nodal (n_nodes, 2, 2) samples, or samples at
            Gauss points (n_elem, 4, 2, 2)
        f: Source callable (evaluated at Gauss points), nodal array or scalar
        grid: Two-dimensional domain grid
        tol: Relative CG residual
        boundary_values: Values on boundary nodes in node order; zero by default
        maxiter: CG iteration cap

    Returns:
        Nodal solution

    Raises:
        EllipticityError: if any sampled matrix has a nonpositive symmetric part
        ConvergenceError: if CG misses ``tol``
    """
    mesh = domain_mesh(grid)
    a_quad = _quadrature_coefficient(A, grid, mesh)
    sym = 0.5 * (a_quad + np.swapaxes(a_quad, -1, -2))
    if np.min(np.linalg.eigvalsh(sym)) <= 0:
        raise EllipticityError("Coefficient samples are not uniformly elliptic on the domain mesh")
    symmetric = bool(np.array_equal(a_quad, np.swapaxes(a_quad, -1, -2)))

    if callable(f):
        f_quad = np.asarray(f(mesh.quadrature_points()), dtype=float)
        f_quad = np.broadcast_to(f_quad, (mesh.n_elements, 4))
    else:
        f_quad = nodal_to_quadrature(mesh, _source_nodes(f, grid))

    boundary = grid.boundary_mask
    data = np.zeros(int(boundary.sum())) if boundary_values is None else np.asarray(boundary_values, dtype=float)
    K = assemble_stiffness(mesh, a_quad)
    load = assemble_load(mesh, f_quad)
    values = solve_dirichlet_system(K, load, boundary, data, symmetric=symmetric, tol=tol, maxiter=maxiter)
    return DomainField(grid, values)


def solve_homogenized(spec: ProblemSpec, cs: CorrectorSet) -> DomainField:
    """
    Solve -div(A_hom grad u0) = f with homogeneous Dirichlet data.

    In 1D the result also carries u0'' from the equation itself,
    u0'' = -(f + a_hom' u0') / a_hom.
    """
    grid = spec.domain_grid()
    if spec.dim == 1:
        a_line = np.broadcast_to(cs.a_hom[:, 0, 0], (grid.n_nodes,))
        u0 = solve_dirichlet_1d(a_line, spec.source, grid)
        f_nodes = _source_nodes(spec.source, grid)
        if cs.depends_on_x:
            da = np.gradient(a_line, grid.axis(0), edge_order=2)
        else:
            da = np.zeros(grid.n_nodes)
        hess = -(f_nodes + da * u0.grad[:, 0]) / a_line
        logger.debug(f"Homogenized 1D solve: max|u0|={np.max(np.abs(u0.values)):.6g}")
        return DomainField(grid, u0.values, u0.grad, hess[:, None, None])

    A = cs.a_hom if cs.depends_on_x else cs.a_hom[0]
    u0 = solve_dirichlet_2d(A, spec.source, grid, tol=spec.cg_tol, maxiter=spec.cg_max_iter)
    logger.debug(f"Homogenized 2D solve: max|u0|={np.max(np.abs(u0.values)):.6g}")
    return u0


def check_resolution(grid: DomainGrid, eps: float) -> bool:
    """Warn when the domain grid has fewer than NODES_PER_EPS intervals per eps."""
    ok = all((grid.nodes_per_dim - 1) / w >= NODES_PER_EPS / eps - 1e-9 for w in grid.extents)
    if not ok:
        logger.warning(f"Domain grid N={grid.nodes_per_dim} under-resolves eps={eps:g}; "
                       f"accuracy needs about {NODES_PER_EPS}/eps intervals per unit length")
    return ok


def _slice_quadrature_coefficient(A: CoefficientField, points: np.ndarray,
                                  y: np.ndarray, eps: float) -> np.ndarray:
    """A(x_q, y + x_q/eps) at Gauss points, shape (n_elem, 4, 2, 2)."""
    return A.matrices(points, y + points / eps)


def solve_oscillating_family(spec: ProblemSpec, eps: float,
                             max_workers: int = 1) -> TwoScaleField:
    """
    Solve -div_x[A(x, y_j + x/eps) grad_x u] = f for every translation node y_j.

    Slices are independent and run on the worker pool; they are assembled
    in y-index order.

    Raises:
        GridCompatibilityError: if eps is not grid-compatible
        SliceSolveError: naming the failing translation index
    """
    dgrid, cgrid = spec.domain_grid(), spec.cell_grid()
    shift_steps(dgrid, cgrid, eps)
    check_resolution(dgrid, eps)
    A = spec.coefficient
    y_nodes = cgrid.coordinates()

    if spec.dim == 1:
        a_samples = shifted_sample(A, eps, dgrid, cgrid).values[..., 0, 0]

        def solve_slice(j):
            u = solve_dirichlet_1d(a_samples[:, j], spec.source, dgrid)
            return u.values, u.grad
    else:
        mesh = domain_mesh(dgrid)
        points = mesh.quadrature_points()

        def solve_slice(j):
            a_quad = _slice_quadrature_coefficient(A, points, y_nodes[j], eps)
            u = solve_dirichlet_2d(a_quad, spec.source, dgrid, tol=spec.cg_tol, maxiter=spec.cg_max_iter)
            return u.values, None

    try:
        slices = run_indexed(solve_slice, list(range(cgrid.n_nodes)),
                             max_workers=max_workers, label=f'slice solve (eps={eps:g})')
    except Exception as e:
        index = getattr(e, 'failed_index', -1)
        raise SliceSolveError(f"Oscillating solve failed for translation node y_{index} "
                              f"at eps={eps:g}: {e}", index) from e

    values = np.stack([s[0] for s in slices], axis=1)
    grad = None
    if slices[0][1] is not None:
        grad = np.stack([s[1] for s in slices], axis=1)
    logger.debug(f"Oscillating family at eps={eps:g}: {cgrid.n_nodes} slices solved")
    return TwoScaleField(dgrid, cgrid, values, grad)


def poincare_constant(grid: DomainGrid) -> float:
    """Poincare constant of H^1_0 on the box: 1 / (pi * sqrt(sum w_d^-2))."""
    return float(1.0 / (np.pi * np.sqrt(np.sum(np.asarray(grid.extents) ** -2.0))))


def stability_bound(grid: DomainGrid, alpha: float, source: Union[Callable, np.ndarray, float]) -> float:
    """Uniform bound (c_Omega / alpha) ||f|| on ||grad_x u_eps|| over Omega x Y."""
    f_norm = nodal_l2_norm(grid, _source_nodes(source, grid))
    return poincare_constant(grid) / alpha * f_norm


def oscillating_gradient_norm(u_eps: TwoScaleField) -> float:
    """||grad_x u_eps|| over Omega x Y."""
    return two_scale_l2_norm(u_eps.domain_grid, x_gradient(u_eps))
