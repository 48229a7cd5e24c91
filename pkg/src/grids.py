"""Discrete domain and unit-cell grids, fields on them, averaging and norms."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)


class GridError(ValueError):
    """Raised for invalid grid parameters or mismatched grids."""


def _frozen(array: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Copy an array to float64 and make it read-only."""
    if array is None:
        return None
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PeriodicGrid:
    """Wrap-indexed grid on the unit cell Y = [0, 1)^dim.

    Node ``k`` along an axis sits at ``k / M``; there is no duplicated seam
    node at y = 1.  Flat node indices are C-ordered over the axes.
    """

    dim: int
    nodes_per_dim: int

    @property
    def spacing(self) -> float:
        return 1.0 / self.nodes_per_dim

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.nodes_per_dim,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_dim ** self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.nodes_per_dim) / self.nodes_per_dim

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape (n_nodes, dim)."""
        mesh = np.meshgrid(*([self.axis()] * self.dim), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def multi_index(self) -> np.ndarray:
        """Integer node indices, shape (n_nodes, dim)."""
        mesh = np.meshgrid(*([np.arange(self.nodes_per_dim)] * self.dim), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def flat_index(self, multi: np.ndarray) -> np.ndarray:
        """Flat index of (possibly out-of-range) multi-indices, wrapping modulo M."""
        multi = np.mod(np.asarray(multi, dtype=np.int64), self.nodes_per_dim)
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), self.shape)


@dataclass(frozen=True)
class DomainGrid:
    """Tensor grid on the box [0, w_1] x ... x [0, w_dim] including its boundary."""

    dim: int
    extents: Tuple[float, ...]
    nodes_per_dim: int

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.nodes_per_dim,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_dim ** self.dim

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(w / (self.nodes_per_dim - 1) for w in self.extents)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def axis(self, d: int = 0) -> np.ndarray:
        return np.linspace(0.0, self.extents[d], self.nodes_per_dim)

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape (n_nodes, dim)."""
        mesh = np.meshgrid(*[self.axis(d) for d in range(self.dim)], indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def multi_index(self) -> np.ndarray:
        mesh = np.meshgrid(*([np.arange(self.nodes_per_dim)] * self.dim), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def boundary_mask(self) -> np.ndarray:
        """True where any coordinate index is 0 or N-1."""
        idx = self.multi_index()
        return np.any((idx == 0) | (idx == self.nodes_per_dim - 1), axis=1)

    @property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights, shape (n_nodes,)."""
        w = np.ones(1)
        for d in range(self.dim):
            wd = np.full(self.nodes_per_dim, self.spacing[d])
            wd[0] = wd[-1] = 0.5 * self.spacing[d]
            w = np.multiply.outer(w, wd)
        return w.ravel()


def build_periodic_grid(dim: int, M: int) -> PeriodicGrid:
    """Build the wrap-indexed cell grid with M nodes per dimension."""
    if dim not in (1, 2):
        raise GridError(f"Unsupported cell dimension {dim}; expected 1 or 2")
    if M < 2:
        raise GridError(f"M too small: {M} (need at least 2 nodes per dimension)")
    return PeriodicGrid(dim=dim, nodes_per_dim=int(M))


def build_domain_grid(dim: int, extents: Sequence[float], N: int) -> DomainGrid:
    """Build the tensor domain grid with N nodes per dimension."""
    if dim not in (1, 2):
        raise GridError(f"Unsupported domain dimension {dim}; expected 1 or 2")
    extents = tuple(float(w) for w in extents)
    if len(extents) != dim:
        raise GridError(f"Expected {dim} extents, got {len(extents)}")
    if any(w <= 0 for w in extents):
        raise GridError(f"nonpositive extent in {extents}")
    if N < 3:
        raise GridError(f"N too small: {N} (need at least 3 nodes per dimension)")
    logger.debug(f"Domain grid: dim={dim}, extents={extents}, N={N}")
    return DomainGrid(dim=dim, extents=extents, nodes_per_dim=int(N))


def _combine(a: Optional[np.ndarray], b: Optional[np.ndarray], sign: float) -> Optional[np.ndarray]:
    if a is None or b is None:
        return None
    return a + sign * b


@dataclass(frozen=True, eq=False)
class DomainField:
    """Function of x sampled on a DomainGrid.

    ``grad`` holds the nodal gradient (n_nodes, dim) when the producing
    solver knows it exactly; ``hess`` likewise holds second derivatives
    (n_nodes, dim, dim).
    """

    grid: DomainGrid
    values: np.ndarray
    grad: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen(self.values))
        object.__setattr__(self, 'grad', _frozen(self.grad))
        object.__setattr__(self, 'hess', _frozen(self.hess))
        if self.values.shape[0] != self.grid.n_nodes:
            raise GridError(
                f"DomainField has {self.values.shape[0]} values for {self.grid.n_nodes} nodes"
            )

    @classmethod
    def from_function(cls, grid: DomainGrid, func: Callable[[np.ndarray], np.ndarray]) -> 'DomainField':
        """Sample ``func(x)`` with x of shape (n_nodes, dim)."""
        x = grid.coordinates()
        values = np.broadcast_to(np.asarray(func(x), dtype=float), (grid.n_nodes,))
        return cls(grid, values)

    def __add__(self, other: 'DomainField') -> 'DomainField':
        _check_same_domain(self.grid, other.grid)
        return DomainField(self.grid, self.values + other.values,
                           _combine(self.grad, other.grad, 1.0),
                           _combine(self.hess, other.hess, 1.0))

    def __sub__(self, other: 'DomainField') -> 'DomainField':
        _check_same_domain(self.grid, other.grid)
        return DomainField(self.grid, self.values - other.values,
                           _combine(self.grad, other.grad, -1.0),
                           _combine(self.hess, other.hess, -1.0))

    def __mul__(self, scalar: float) -> 'DomainField':
        return DomainField(self.grid, scalar * self.values,
                           None if self.grad is None else scalar * self.grad,
                           None if self.hess is None else scalar * self.hess)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class TwoScaleField:
    """Function of (x, y) on domain nodes x cell nodes.

    ``values`` has shape (n_domain, n_cell) plus an optional component
    shape.  ``grad`` is the exact x-gradient (n_domain, n_cell, dim) and
    ``ygrad`` the exact y-gradient, when known.
    """

    domain_grid: DomainGrid
    cell_grid: PeriodicGrid
    values: np.ndarray
    grad: Optional[np.ndarray] = None
    ygrad: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen(self.values))
        object.__setattr__(self, 'grad', _frozen(self.grad))
        object.__setattr__(self, 'ygrad', _frozen(self.ygrad))
        expected = (self.domain_grid.n_nodes, self.cell_grid.n_nodes)
        if self.values.shape[:2] != expected:
            raise GridError(
                f"TwoScaleField values shape {self.values.shape[:2]} does not match grids {expected}"
            )

    @classmethod
    def from_function(cls, domain_grid: DomainGrid, cell_grid: PeriodicGrid,
                      func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> 'TwoScaleField':
        """Sample ``func(x, y)`` with x of shape (n_domain, 1, dim), y of shape (1, n_cell, dim)."""
        x = domain_grid.coordinates()[:, None, :]
        y = cell_grid.coordinates()[None, :, :]
        shape = (domain_grid.n_nodes, cell_grid.n_nodes)
        values = np.broadcast_to(np.asarray(func(x, y), dtype=float), shape)
        return cls(domain_grid, cell_grid, values)

    @classmethod
    def from_domain(cls, u: DomainField, cell_grid: PeriodicGrid) -> 'TwoScaleField':
        """Extend a y-independent field u(x) to u(x) (x) 1(y)."""
        m = cell_grid.n_nodes
        values = np.repeat(u.values[:, None], m, axis=1)
        grad = None if u.grad is None else np.repeat(u.grad[:, None, :], m, axis=1)
        ygrad = np.zeros((u.grid.n_nodes, m, u.grid.dim))
        return cls(u.grid, cell_grid, values, grad, ygrad)

    def __add__(self, other: 'TwoScaleField') -> 'TwoScaleField':
        check_same_grids(self, other)
        return TwoScaleField(self.domain_grid, self.cell_grid, self.values + other.values,
                             _combine(self.grad, other.grad, 1.0),
                             _combine(self.ygrad, other.ygrad, 1.0))

    def __sub__(self, other: 'TwoScaleField') -> 'TwoScaleField':
        check_same_grids(self, other)
        return TwoScaleField(self.domain_grid, self.cell_grid, self.values - other.values,
                             _combine(self.grad, other.grad, -1.0),
                             _combine(self.ygrad, other.ygrad, -1.0))

    def __mul__(self, scalar: float) -> 'TwoScaleField':
        return TwoScaleField(self.domain_grid, self.cell_grid, scalar * self.values,
                             None if self.grad is None else scalar * self.grad,
                             None if self.ygrad is None else scalar * self.ygrad)

    __rmul__ = __mul__


Field = Union[DomainField, TwoScaleField]


def _check_same_domain(a: DomainGrid, b: DomainGrid):
    if a != b:
        raise GridError(f"Domain grid mismatch: {a} vs {b}")


def check_same_grids(u: TwoScaleField, v: TwoScaleField):
    """Raise GridError unless both two-scale fields live on the same grids."""
    _check_same_domain(u.domain_grid, v.domain_grid)
    if u.cell_grid != v.cell_grid:
        raise GridError(f"Cell grid mismatch: {u.cell_grid} vs {v.cell_grid}")


def cell_average(u: TwoScaleField) -> DomainField:
    """Equal-weight mean over the cell nodes: the periodic trapezoid rule."""
    grad = None if u.grad is None else u.grad.mean(axis=1)
    return DomainField(u.domain_grid, u.values.mean(axis=1), grad)


def _squared_magnitude(values: np.ndarray, leading: int) -> np.ndarray:
    """Sum of squares over component axes beyond the first ``leading`` axes."""
    sq = np.square(values)
    if sq.ndim > leading:
        sq = sq.reshape(sq.shape[:leading] + (-1,)).sum(axis=-1)
    return sq


def integrate(u: Field) -> float:
    """Integral over Omega (and mean over Y) of a scalar field."""
    if isinstance(u, TwoScaleField):
        return float(u.domain_grid.weights @ u.values.mean(axis=1))
    return float(u.grid.weights @ u.values)


def l2_norm(u: Field) -> float:
    """Trapezoid L2 norm over Omega, with the cell mean for two-scale input."""
    if isinstance(u, TwoScaleField):
        sq = _squared_magnitude(u.values, 2).mean(axis=1)
        return float(np.sqrt(u.domain_grid.weights @ sq))
    sq = _squared_magnitude(u.values, 1)
    return float(np.sqrt(u.grid.weights @ sq))


def nodal_l2_norm(grid: DomainGrid, values: np.ndarray) -> float:
    """L2 norm over Omega of raw nodal values shaped (n_domain, ...)."""
    return float(np.sqrt(grid.weights @ _squared_magnitude(values, 1)))


def two_scale_l2_norm(grid: DomainGrid, values: np.ndarray) -> float:
    """L2 norm over Omega x Y of raw values shaped (n_domain, n_cell, ...)."""
    sq = _squared_magnitude(values, 2).mean(axis=1)
    return float(np.sqrt(grid.weights @ sq))


def sup_norm(u: Field) -> float:
    return float(np.max(np.abs(u.values))) if u.values.size else 0.0


def finite_difference_gradient(grid: DomainGrid, values: np.ndarray) -> np.ndarray:
    """Central differences inside, one-sided at the boundary.

    ``values`` has shape (n_domain, ...); the result appends a trailing
    axis of length dim.
    """
    trailing = values.shape[1:]
    arr = values.reshape(grid.shape + trailing)
    parts = np.gradient(arr, *grid.spacing, axis=tuple(range(grid.dim)), edge_order=1)
    if grid.dim == 1:
        parts = [parts]
    stacked = np.stack(parts, axis=-1)
    return stacked.reshape((grid.n_nodes,) + trailing + (grid.dim,))


def gradient(u: DomainField) -> np.ndarray:
    """Nodal gradient (n_nodes, dim): exact when carried, else finite differences."""
    if u.grad is not None:
        return u.grad
    return finite_difference_gradient(u.grid, u.values)


def x_gradient(u: TwoScaleField) -> np.ndarray:
    """Nodal x-gradient (n_domain, n_cell, dim) of a scalar two-scale field."""
    if u.grad is not None:
        return u.grad
    return finite_difference_gradient(u.domain_grid, u.values)


def h1_seminorm(u: DomainField) -> float:
    """L2 norm of the finite-difference gradient."""
    grad = finite_difference_gradient(u.grid, u.values)
    return float(np.sqrt(u.grid.weights @ _squared_magnitude(grad, 1)))


def h1_norm(u: DomainField, exact: bool = True) -> float:
    """Full H1 norm; uses the carried gradient when ``exact`` and available."""
    grad = gradient(u) if exact else finite_difference_gradient(u.grid, u.values)
    semi_sq = u.grid.weights @ _squared_magnitude(grad, 1)
    return float(np.sqrt(l2_norm(u) ** 2 + semi_sq))
