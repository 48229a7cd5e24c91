"""Structured-grid finite elements and the projected conjugate-gradient solver.

Bilinear quadrilaterals with 2x2 Gauss quadrature on the periodic cell
grid and on the box domain grid; linear elements on the periodic 1D cell.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from src.grids import DomainGrid, PeriodicGrid

logger = logging.getLogger(__name__)

_GAUSS_1D = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
# Reference element [0,1]^2, nodes counter-clockwise from the origin.
_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
GAUSS_POINTS = np.array([[a, b] for a in _GAUSS_1D for b in _GAUSS_1D])
GAUSS_WEIGHTS = np.full(4, 0.25)


def _shape_values(points: np.ndarray) -> np.ndarray:
    """Bilinear shape functions at reference points, shape (n_points, 4)."""
    xi, eta = points[:, 0:1], points[:, 1:2]
    cx, cy = _CORNERS[:, 0][None, :], _CORNERS[:, 1][None, :]
    return np.where(cx == 1, xi, 1 - xi) * np.where(cy == 1, eta, 1 - eta)


def _shape_gradients(points: np.ndarray) -> np.ndarray:
    """Reference gradients, shape (n_points, 4, 2)."""
    xi, eta = points[:, 0:1], points[:, 1:2]
    cx, cy = _CORNERS[:, 0][None, :], _CORNERS[:, 1][None, :]
    fx = np.where(cx == 1, xi, 1 - xi)
    fy = np.where(cy == 1, eta, 1 - eta)
    dfx = np.where(cx == 1, 1.0, -1.0) * np.ones_like(xi)
    dfy = np.where(cy == 1, 1.0, -1.0) * np.ones_like(eta)
    return np.stack([dfx * fy, fx * dfy], axis=-1)


SHAPE_AT_GAUSS = _shape_values(GAUSS_POINTS)
GRAD_AT_GAUSS = _shape_gradients(GAUSS_POINTS)


class ConvergenceError(RuntimeError):
    """Raised when CG misses its tolerance within the iteration cap."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class QuadMesh:
    """Element connectivity and geometry of a structured quadrilateral mesh."""

    elements: np.ndarray      # (n_elem, 4) flat node indices
    origins: np.ndarray       # (n_elem, 2) lower-left corner coordinates
    h: Tuple[float, float]
    n_nodes: int

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def area(self) -> float:
        return self.h[0] * self.h[1]

    def quadrature_points(self) -> np.ndarray:
        """Physical Gauss points, shape (n_elem, 4, 2)."""
        return self.origins[:, None, :] + GAUSS_POINTS[None, :, :] * np.asarray(self.h)

    def physical_gradients(self) -> np.ndarray:
        """Shape gradients at Gauss points in physical units, shape (4 q, 4 a, 2)."""
        return GRAD_AT_GAUSS / np.asarray(self.h)


def periodic_mesh(cgrid: PeriodicGrid) -> QuadMesh:
    """M x M elements on the unit torus, node indices wrapping modulo M."""
    M = cgrid.nodes_per_dim
    i, j = np.meshgrid(np.arange(M), np.arange(M), indexing='ij')
    base = np.stack([i.ravel(), j.ravel()], axis=-1)
    corners = base[:, None, :] + _CORNERS[None, :, :]
    elements = cgrid.flat_index(corners)
    origins = base / M
    return QuadMesh(elements, origins, (1.0 / M, 1.0 / M), cgrid.n_nodes)


def domain_mesh(grid: DomainGrid) -> QuadMesh:
    """(N-1)^2 elements on the box domain."""
    if grid.dim != 2:
        raise ValueError("Quadrilateral meshes need a two-dimensional domain grid")
    N = grid.nodes_per_dim
    i, j = np.meshgrid(np.arange(N - 1), np.arange(N - 1), indexing='ij')
    base = np.stack([i.ravel(), j.ravel()], axis=-1)
    corners = base[:, None, :] + _CORNERS[None, :, :]
    elements = np.ravel_multi_index((corners[..., 0], corners[..., 1]), (N, N))
    origins = base * np.asarray(grid.spacing)
    return QuadMesh(elements, origins, grid.spacing, grid.n_nodes)


def nodal_to_quadrature(mesh: QuadMesh, nodal: np.ndarray) -> np.ndarray:
    """Interpolate nodal values (n_nodes, ...) to Gauss points (n_elem, 4, ...)."""
    local = nodal[mesh.elements]                     # (n_elem, 4 a, ...)
    return np.einsum('qa,ea...->eq...', SHAPE_AT_GAUSS, local)


def assemble_stiffness(mesh: QuadMesh, a_quad: np.ndarray) -> sp.csr_matrix:
    """Global matrix of the form a(u, v) = integral A grad u . grad v.

    Args:
        mesh: Structured mesh
        a_quad: Coefficient matrices at Gauss points, shape (n_elem, 4, 2, 2)
    """
    grads = mesh.physical_gradients()
    weight = GAUSS_WEIGHTS * mesh.area
    # K_e[a, b] = sum_q w_q grad N_a(q) . A_q grad N_b(q)
    local = np.einsum('q,qai,eqij,qbj->eab', weight, grads, a_quad, grads)
    rows = np.repeat(mesh.elements, 4, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 4)).ravel()
    matrix = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return matrix.tocsr()


def assemble_flux_load(mesh: QuadMesh, flux_quad: np.ndarray) -> np.ndarray:
    """Vector b_a = integral flux . grad N_a for a flux sampled at Gauss points (n_elem, 4, 2)."""
    grads = mesh.physical_gradients()
    weight = GAUSS_WEIGHTS * mesh.area
    local = np.einsum('q,eqi,qai->ea', weight, flux_quad, grads)
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def assemble_load(mesh: QuadMesh, f_quad: np.ndarray) -> np.ndarray:
    """Vector b_a = integral f N_a for f sampled at Gauss points (n_elem, 4)."""
    weight = GAUSS_WEIGHTS * mesh.area
    local = np.einsum('q,eq,qa->ea', weight, f_quad, SHAPE_AT_GAUSS)
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def gradient_at_quadrature(mesh: QuadMesh, nodal: np.ndarray) -> np.ndarray:
    """Gradient of the bilinear interpolant at Gauss points, shape (n_elem, 4, 2)."""
    local = nodal[mesh.elements]
    return np.einsum('qai,ea->eqi', mesh.physical_gradients(), local)


def periodic_harmonic_conductances(a_nodes: np.ndarray) -> np.ndarray:
    """Element coefficients 1 / mean(1/a) over the two end nodes of each periodic 1D element."""
    inv = 1.0 / a_nodes
    return 1.0 / (0.5 * (inv + np.roll(inv, -1)))


def periodic_stiffness_1d(a_nodes: np.ndarray) -> sp.csr_matrix:
    """Linear elements on the periodic 1D cell with harmonic element coefficients."""
    M = a_nodes.shape[0]
    k = periodic_harmonic_conductances(a_nodes) * M     # a_e / h
    left = np.arange(M)
    right = np.roll(left, -1)
    rows = np.concatenate([left, left, right, right])
    cols = np.concatenate([left, right, left, right])
    data = np.concatenate([k, -k, -k, k])
    return sp.coo_matrix((data, (rows, cols)), shape=(M, M)).tocsr()


def periodic_cell_load_1d(a_nodes: np.ndarray) -> np.ndarray:
    """Right-hand side -integral a phi_k' of the 1D cell problem: b_k = a_{k+1/2} - a_{k-1/2}."""
    a_e = periodic_harmonic_conductances(a_nodes)
    return a_e - np.roll(a_e, 1)


def conjugate_gradient(A: sp.spmatrix,
                       b: np.ndarray,
                       x0: Optional[np.ndarray] = None,
                       tol: float = 1e-10,
                       maxiter: Optional[int] = None,
                       project_constants: bool = False,
                       jacobi: bool = True) -> Tuple[np.ndarray, Dict[str, Union[int, float, bool]]]:
    """
    Preconditioned conjugate gradients to relative residual ``tol``.

    With ``project_constants`` the system is treated as semi-definite with
    the constant vector as its nullspace: the right-hand side, the
    preconditioned residuals and the final iterate are kept mean-free.

    Returns:
        (x, info) with info keys 'niter', 'res_norm', 'success'

    Raises:
        ConvergenceError: if the tolerance is not met within ``maxiter``
    """
    n = A.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    b = np.asarray(b, dtype=float)
    if project_constants:
        b = b - b.mean()
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n), {'niter': 0, 'res_norm': 0.0, 'success': True}

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if project_constants:
        x -= x.mean()
    inv_diag = 1.0 / A.diagonal() if jacobi else np.ones(n)

    r = b - A @ x
    z = inv_diag * r
    if project_constants:
        z -= z.mean()
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / b_norm

    k = 0
    while res > tol and k < maxiter:
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        z = inv_diag * r
        if project_constants:
            z -= z.mean()
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
        res = np.linalg.norm(r) / b_norm
        k += 1
        if res <= tol:
            # The recursive residual drifts; confirm with the true one and restart if needed.
            r = b - A @ x
            res = np.linalg.norm(r) / b_norm
            if res > tol:
                z = inv_diag * r
                if project_constants:
                    z -= z.mean()
                p = z.copy()
                rz = r @ z

    if project_constants:
        x -= x.mean()
    info = {'niter': k, 'res_norm': float(res), 'success': bool(res <= tol)}
    logger.debug(f"CG finished after {k} iterations, relative residual {res:.3e}")
    if not info['success']:
        raise ConvergenceError(
            f"CG did not converge: relative residual {res:.3e} > {tol:.1e} after {k} iterations",
            iterations=k, residual=float(res))
    return x, info


def solve_spd_or_general(A: sp.spmatrix,
                         b: np.ndarray,
                         symmetric: bool,
                         tol: float = 1e-10,
                         maxiter: Optional[int] = None,
                         project_constants: bool = False) -> Tuple[np.ndarray, Dict]:
    """CG for symmetric systems; a pinned direct sparse solve otherwise."""
    if symmetric:
        return conjugate_gradient(A, b, tol=tol, maxiter=maxiter,
                                  project_constants=project_constants)
    b = np.asarray(b, dtype=float)
    system, rhs = A, b
    if project_constants:
        b = b - b.mean()
        # Pin node 0 to remove the constant nullspace, then restore zero mean.
        system = sp.lil_matrix(A)
        system[0, :] = 0.0
        system[0, 0] = 1.0
        rhs = b.copy()
        rhs[0] = 0.0
    x = spsolve(sp.csc_matrix(system), rhs)
    if project_constants:
        x = x - x.mean()
    res = relative_residual(A, x, b)
    return x, {'niter': 1, 'res_norm': res, 'success': True}


def relative_residual(A: sp.spmatrix, x: np.ndarray, b: np.ndarray, atol: float = 0.0) -> float:
    """||b - A x|| / ||b||, and the plain residual norm when ||b|| <= atol."""
    r = np.linalg.norm(b - A @ x)
    b_norm = np.linalg.norm(b)
    return float(r / b_norm) if b_norm > atol else float(r)


def solve_dirichlet_system(K: sp.csr_matrix,
                           load: np.ndarray,
                           boundary: np.ndarray,
                           boundary_values: np.ndarray,
                           symmetric: bool,
                           tol: float,
                           maxiter: Optional[int] = None) -> np.ndarray:
    """Eliminate Dirichlet nodes and solve for the interior ones."""
    interior = ~boundary
    u = np.zeros(K.shape[0])
    u[boundary] = boundary_values
    K_ii = K[interior][:, interior]
    K_ib = K[interior][:, boundary]
    rhs = load[interior] - K_ib @ boundary_values
    u_i, _ = solve_spd_or_general(K_ii, rhs, symmetric=symmetric, tol=tol, maxiter=maxiter)
    u[interior] = u_i
    return u


SourceFunction = Callable[[np.ndarray], np.ndarray]
