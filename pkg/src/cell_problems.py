"""Periodic cell problems for the correctors chi_i and the homogenized matrix."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from src.coefficients import CoefficientField
from src.fem import (
    GAUSS_WEIGHTS,
    assemble_flux_load,
    assemble_stiffness,
    gradient_at_quadrature,
    periodic_cell_load_1d,
    periodic_mesh,
    periodic_stiffness_1d,
    relative_residual,
    solve_spd_or_general,
)
from src.grids import PeriodicGrid, build_periodic_grid
from src.utils import run_indexed

logger = logging.getLogger(__name__)

DEFAULT_CG_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    """Correctors and homogenized matrices on one cell grid.

    Arrays carry a leading x axis of length 1 for x-independent
    coefficients and of length n_domain otherwise:

    - ``chi``: (n_x, dim, n_cell), zero mean over the cell
    - ``chi_grad``: (n_x, dim, n_cell, dim), nodal grad_y chi_i
    - ``a_hom``: (n_x, dim, dim)
    """

    cell_grid: PeriodicGrid
    chi: np.ndarray
    chi_grad: np.ndarray
    a_hom: np.ndarray
    residual: float
    alpha: float
    beta: float
    iterations: int = 0

    @property
    def dim(self) -> int:
        return self.cell_grid.dim

    @property
    def depends_on_x(self) -> bool:
        return self.chi.shape[0] > 1

    @property
    def a_hom_matrix(self) -> np.ndarray:
        """The homogenized matrix of an x-independent coefficient."""
        if self.depends_on_x:
            raise ValueError("a_hom varies with x; index CorrectorSet.a_hom per domain node")
        return self.a_hom[0]


def _x_points(A: CoefficientField, x_points: Optional[np.ndarray]) -> np.ndarray:
    if not A.depends_on_x:
        return np.zeros((1, A.dim))
    if x_points is None:
        raise ValueError(f"Coefficient {A.catalog_id} depends on x; pass the domain nodes as x_points")
    return np.asarray(x_points, dtype=float).reshape(-1, A.dim)


def _scalar_samples_1d(A: CoefficientField, cgrid: PeriodicGrid, x: np.ndarray) -> np.ndarray:
    """a(x_i, y_k) as shape (n_x, M)."""
    mats = A.matrices(x[:, None, :], cgrid.coordinates()[None, :, :])
    return mats[..., 0, 0]


def solve_cell_1d(a: CoefficientField, M: int, x_points: Optional[np.ndarray] = None) -> CorrectorSet:
    """
    Direct integration of the 1D cell equation a (1 + chi') = a_hom.

    Args:
        a: One-dimensional coefficient
        M: Cell grid nodes
        x_points: Domain nodes, needed only when ``a`` depends on x

    Returns:
        CorrectorSet with a_hom = 1 / mean(1/a)
    """
    if a.dim != 1:
        raise ValueError(f"solve_cell_1d needs a one-dimensional coefficient, got dim={a.dim}")
    cgrid = build_periodic_grid(1, M)
    x = _x_points(a, x_points)
    a_nodes = _scalar_samples_1d(a, cgrid, x)
    if np.any(a_nodes <= 0):
        raise ValueError(f"Coefficient {a.catalog_id} has nonpositive nodal values")

    inv = 1.0 / a_nodes
    a_hom = 1.0 / inv.mean(axis=-1)
    chi_prime = a_hom[:, None] * inv - 1.0
    # The periodic closure sums to zero, so the last increment returns to chi_0.
    chi = cumulative_trapezoid(chi_prime, dx=cgrid.spacing, axis=-1, initial=0.0)
    chi -= chi.mean(axis=-1, keepdims=True)

    cs = CorrectorSet(
        cell_grid=cgrid,
        chi=chi[:, None, :],
        chi_grad=chi_prime[:, None, :, None],
        a_hom=np.zeros((x.shape[0], 1, 1)),
        residual=0.0,
        alpha=a.alpha,
        beta=a.beta,
    )
    cs = _with_a_hom(a, cs, x)
    residual = cell_residual(a, cs, x_points)
    logger.debug(f"1D cell problem: M={M}, a_hom={cs.a_hom[:, 0, 0].min():.12g}, residual={residual:.3e}")
    return _replace(cs, residual=residual)


def _replace(cs: CorrectorSet, **changes) -> CorrectorSet:
    fields = dict(cell_grid=cs.cell_grid, chi=cs.chi, chi_grad=cs.chi_grad, a_hom=cs.a_hom,
                  residual=cs.residual, alpha=cs.alpha, beta=cs.beta, iterations=cs.iterations)
    fields.update(changes)
    return CorrectorSet(**fields)


def _with_a_hom(A: CoefficientField, cs: CorrectorSet, x: np.ndarray) -> CorrectorSet:
    return _replace(cs, a_hom=np.stack([_a_hom_at(A, cs, x, ix) for ix in range(x.shape[0])]))


def _quadrature_samples(A: CoefficientField, mesh, x_point: np.ndarray) -> np.ndarray:
    """A at the Gauss points of the periodic mesh for one x, shape (n_elem, 4, 2, 2)."""
    points = mesh.quadrature_points()
    return A.matrices(x_point.reshape(1, 1, A.dim), points)


def _periodic_gradient(cgrid: PeriodicGrid, values: np.ndarray) -> np.ndarray:
    """Central differences with wrap, values (..., n_cell) -> (..., n_cell, dim)."""
    lead = values.shape[:-1]
    arr = values.reshape(lead + cgrid.shape)
    parts = []
    for d in range(cgrid.dim):
        axis = len(lead) + d
        diff = (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2.0 * cgrid.spacing)
        parts.append(diff.reshape(lead + (cgrid.n_nodes,)))
    return np.stack(parts, axis=-1)


def _load_floor(A: CoefficientField, cgrid: PeriodicGrid) -> float:
    """Load norm below which the cell right-hand side counts as zero."""
    return 1e-12 * A.beta * cgrid.spacing * np.sqrt(cgrid.n_nodes)


def _solve_cell_2d_at(A: CoefficientField, cgrid: PeriodicGrid, x_point: np.ndarray,
                      tol: float, maxiter: int) -> Tuple[np.ndarray, float, int]:
    mesh = periodic_mesh(cgrid)
    a_quad = _quadrature_samples(A, mesh, x_point)
    K = assemble_stiffness(mesh, a_quad)
    chi = np.zeros((2, cgrid.n_nodes))
    residual, iterations = 0.0, 0
    floor = _load_floor(A, cgrid)
    for i in range(2):
        load = -assemble_flux_load(mesh, a_quad[..., :, i])
        if np.linalg.norm(load) <= floor:
            # constant-in-y coefficients: the load is rounding noise
            continue
        chi[i], info = solve_spd_or_general(K, load, symmetric=A.symmetric, tol=tol,
                                            maxiter=maxiter, project_constants=True)
        residual = max(residual, info['res_norm'])
        iterations += info['niter']
    return chi, residual, iterations


def solve_cell_2d(A: CoefficientField,
                  M: int,
                  tol: float = DEFAULT_CG_TOL,
                  x_points: Optional[np.ndarray] = None,
                  max_workers: int = 1,
                  maxiter: Optional[int] = None) -> CorrectorSet:
    """
    Bilinear FEM for -div_y[A (grad_y chi_i + e_i)] = 0 on the periodic M x M cell.

    Args:
        A: Two-dimensional coefficient
        M: Cell grid nodes per dimension (at least 8)
        tol: Relative CG residual
        x_points: Domain nodes, needed only when ``A`` depends on x
        max_workers: Concurrent per-x-node solves
        maxiter: CG iteration cap, 10 M^2 by default

    Returns:
        CorrectorSet with zero-mean chi_i and a_hom from the solver's quadrature

    Raises:
        ConvergenceError: if CG misses ``tol``
    """
    if A.dim != 2:
        raise ValueError(f"solve_cell_2d needs a two-dimensional coefficient, got dim={A.dim}")
    if M < 8:
        raise ValueError(f"M too small for the 2D cell problem: {M} (need at least 8)")
    cgrid = build_periodic_grid(2, M)
    x = _x_points(A, x_points)
    maxiter = 10 * M * M if maxiter is None else maxiter

    results = run_indexed(lambda ix: _solve_cell_2d_at(A, cgrid, x[ix], tol, maxiter),
                          list(range(x.shape[0])), max_workers=max_workers, label='cell solve')
    chi = np.stack([r[0] for r in results])
    residual = max(r[1] for r in results)
    iterations = sum(r[2] for r in results)

    cs = CorrectorSet(
        cell_grid=cgrid,
        chi=chi,
        chi_grad=_periodic_gradient(cgrid, chi),
        a_hom=np.zeros((x.shape[0], 2, 2)),
        residual=residual,
        alpha=A.alpha,
        beta=A.beta,
        iterations=iterations,
    )
    cs = _with_a_hom(A, cs, x)
    logger.info(f"2D cell problems solved: M={M}, x-nodes={x.shape[0]}, "
                f"CG iterations={iterations}, residual={residual:.3e}")
    return cs


def solve_cell(A: CoefficientField, M: int, tol: float = DEFAULT_CG_TOL,
               x_points: Optional[np.ndarray] = None, max_workers: int = 1) -> CorrectorSet:
    """Dispatch to the 1D or 2D cell solver."""
    if A.dim == 1:
        return solve_cell_1d(A, M, x_points)
    return solve_cell_2d(A, M, tol, x_points, max_workers)


def _a_hom_at(A: CoefficientField, cs: CorrectorSet, x: np.ndarray, ix: int) -> np.ndarray:
    cgrid = cs.cell_grid
    if cs.dim == 1:
        a_nodes = _scalar_samples_1d(A, cgrid, x[ix:ix + 1])[0]
        return np.array([[np.mean(a_nodes * (1.0 + cs.chi_grad[ix, 0, :, 0]))]])

    mesh = periodic_mesh(cgrid)
    a_quad = _quadrature_samples(A, mesh, x[ix])
    a_hom = np.zeros((2, 2))
    weight = GAUSS_WEIGHTS * mesh.area
    for j in range(2):
        grad_chi = gradient_at_quadrature(mesh, cs.chi[ix, j])
        column = grad_chi.copy()
        column[..., j] += 1.0
        flux = np.einsum('eqik,eqk->eqi', a_quad, column)
        a_hom[:, j] = np.einsum('q,eqi->i', weight, flux)
    return a_hom


def compute_a_hom(A: CoefficientField, cs: CorrectorSet,
                  x_points: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Cell average of A (I + grad_y chi) with the solver's quadrature.

    Returns:
        (dim, dim) matrix for x-independent A, else (n_x, dim, dim)
    """
    x = _x_points(A, x_points)
    mats = np.stack([_a_hom_at(A, cs, x, ix) for ix in range(x.shape[0])])
    return mats if A.depends_on_x else mats[0]


def cell_residual(A: CoefficientField, cs: CorrectorSet,
                  x_points: Optional[np.ndarray] = None) -> float:
    """Max over directions and x-nodes of ||B chi_i - b_i|| / ||b_i||."""
    x = _x_points(A, x_points)
    cgrid = cs.cell_grid
    worst = 0.0
    for ix in range(x.shape[0]):
        if cs.dim == 1:
            a_nodes = _scalar_samples_1d(A, cgrid, x[ix:ix + 1])[0]
            K = periodic_stiffness_1d(a_nodes)
            loads = [periodic_cell_load_1d(a_nodes)]
        else:
            mesh = periodic_mesh(cgrid)
            a_quad = _quadrature_samples(A, mesh, x[ix])
            K = assemble_stiffness(mesh, a_quad)
            loads = [-assemble_flux_load(mesh, a_quad[..., :, i]) for i in range(2)]
        floor = _load_floor(A, cgrid)
        for i, load in enumerate(loads):
            worst = max(worst, relative_residual(K, cs.chi[ix, i], load, atol=floor))
    return worst


def corrector_norms(cs: CorrectorSet) -> Dict[str, List[float]]:
    """Per-direction H1 (periodic) and sup norms of chi, maximised over x-nodes."""
    l2_sq = np.mean(cs.chi ** 2, axis=-1)                          # (n_x, dim)
    grad_sq = np.mean(np.sum(cs.chi_grad ** 2, axis=-1), axis=-1)  # (n_x, dim)
    h1 = np.sqrt(l2_sq + grad_sq).max(axis=0)
    sup = np.abs(cs.chi).max(axis=(0, 2))
    return {'h1': h1.tolist(), 'sup': sup.tolist()}


def chi_sup_norm(cs: CorrectorSet) -> float:
    """|chi|_inf over all directions and nodes (a lower bound of the true sup)."""
    return float(np.max(np.abs(cs.chi))) if cs.chi.size else 0.0


def mesh_convergence(A: CoefficientField, M: int, levels: int = 3,
                     tol: float = DEFAULT_CG_TOL) -> List[Tuple[int, np.ndarray]]:
    """a_hom on M, 2M, ... for the observed-order check of the cell discretization."""
    out = []
    for level in range(levels):
        size = M * 2 ** level
        cs = solve_cell(A, size, tol)
        out.append((size, cs.a_hom_matrix))
        logger.debug(f"a_hom at M={size}: {cs.a_hom_matrix.tolist()}")
    return out
