"""Catalog of Y-periodic matrix coefficients A(x, y) and their eps-shifted sampling."""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from src.expressions import Expression, parse_expression
from src.grids import DomainGrid, GridError, PeriodicGrid, TwoScaleField

logger = logging.getLogger(__name__)

# Tolerances for the x-in-closure check and for integer shift detection.
DOMAIN_TOL = 1e-12
SHIFT_TOL = 1e-9

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


class EllipticityError(ValueError):
    """Raised when a coefficient's sampled minimum eigenvalue is not positive."""


class GridCompatibilityError(GridError):
    """Raised when x/eps does not land on cell nodes for every domain node."""


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Matrix field A(x, y), Y-periodic in y.

    ``evaluator(x, y)`` takes point arrays of shape (..., dim) and returns
    matrices of shape (..., dim, dim).
    """

    dim: int
    evaluator: Evaluator
    alpha: float
    beta: float
    catalog_id: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    extents: Optional[Tuple[float, ...]] = None
    depends_on_x: bool = False
    symmetric: bool = True

    def matrices(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vectorised evaluation with y wrapped into [0, 1)^dim."""
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        return self.evaluator(np.asarray(x, dtype=float), y)


def _broadcast_shape(x: np.ndarray, y: np.ndarray) -> Tuple[int, ...]:
    return np.broadcast_shapes(x.shape[:-1], y.shape[:-1])


def _isotropic(dim: int, profile: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Evaluator:
    """Evaluator for profile(x, y) * I."""
    def evaluator(x, y):
        shape = _broadcast_shape(x, y)
        scalar = np.broadcast_to(profile(x, y), shape)
        return scalar[..., None, None] * np.eye(dim)
    return evaluator


def _cosine(base: float, amp: float, freq: int, t: np.ndarray) -> np.ndarray:
    return base + amp * np.cos(2.0 * np.pi * freq * t)


def _integer_frequency(params: Dict[str, Any]) -> int:
    freq = params.get('freq', 1)
    if float(freq) != int(freq) or int(freq) < 1:
        raise ValueError(f"freq must be a positive integer to keep Y-periodicity, got {freq}")
    return int(freq)


def _constant(dim, params):
    value = float(params.get('value', 1.0))
    return _isotropic(dim, lambda x, y: np.full(_broadcast_shape(x, y), value)), False, True


def _cosine1d(dim, params):
    if dim != 1:
        raise ValueError("cosine1d is a one-dimensional coefficient")
    base, amp = float(params.get('base', 2.0)), float(params.get('amp', 1.0))
    freq = _integer_frequency(params)
    return _isotropic(1, lambda x, y: _cosine(base, amp, freq, y[..., 0])), False, True


def _laminate2d(dim, params):
    if dim != 2:
        raise ValueError("laminate2d is a two-dimensional coefficient")
    base, amp = float(params.get('base', 2.0)), float(params.get('amp', 1.0))
    freq = _integer_frequency(params)
    axis = int(params.get('axis', 0))
    if axis not in (0, 1):
        raise ValueError(f"laminate2d axis must be 0 or 1, got {axis}")
    return _isotropic(2, lambda x, y: _cosine(base, amp, freq, y[..., axis])), False, True


def _product(dim, params):
    base, amp = float(params.get('base', 2.0)), float(params.get('amp', 1.0))
    freq = _integer_frequency(params)

    def profile(x, y):
        out = np.ones(y.shape[:-1])
        for d in range(dim):
            out = out * _cosine(base, amp, freq, y[..., d])
        return out
    return _isotropic(dim, profile), False, True


def _checkerboard_smooth(dim, params):
    if dim != 2:
        raise ValueError("checkerboard_smooth is a two-dimensional coefficient")
    base, amp = float(params.get('base', 2.0)), float(params.get('amp', 1.0))
    sharpness = float(params.get('sharpness', 4.0))

    def profile(x, y):
        s = np.sin(2.0 * np.pi * y[..., 0]) * np.sin(2.0 * np.pi * y[..., 1])
        return base + amp * np.tanh(sharpness * s)
    return _isotropic(2, profile), False, True


def _expr(dim, params):
    source = params.get('expr')
    if source is None:
        raise ValueError("expr coefficient needs an 'expr' entry")
    if isinstance(source, str):
        expression = parse_expression(source)
        _check_expression_dims(expression, dim)
        return _isotropic(dim, expression), expression.uses('x'), True

    rows = [list(row) for row in source]
    if len(rows) != dim or any(len(row) != dim for row in rows):
        raise ValueError(f"expr matrix must be {dim}x{dim}")
    entries = [[parse_expression(str(e)) for e in row] for row in rows]
    for row in entries:
        for e in row:
            _check_expression_dims(e, dim)

    def evaluator(x, y):
        shape = _broadcast_shape(x, y)
        out = np.empty(shape + (dim, dim))
        for i in range(dim):
            for j in range(dim):
                out[..., i, j] = entries[i][j](x, y)
        return out
    uses_x = any(e.uses('x') for row in entries for e in row)
    return evaluator, uses_x, False


def _check_expression_dims(expression: Expression, dim: int):
    for name in expression.variables:
        if int(name[1]) > dim:
            raise ValueError(f"Variable {name} not available in dimension {dim}")


CATALOG: Dict[str, Callable[[int, Dict[str, Any]], Tuple[Evaluator, bool, bool]]] = {
    'constant': _constant,
    'cosine1d': _cosine1d,
    'laminate2d': _laminate2d,
    'product': _product,
    'checkerboard_smooth': _checkerboard_smooth,
    'expr': _expr,
}


def make_coefficient(catalog_id: str,
                     parameters: Optional[Dict[str, Any]] = None,
                     dim: int = 1,
                     extents: Optional[Sequence[float]] = None,
                     samples: int = 64) -> CoefficientField:
    """
    Build a catalog coefficient and record its sampled ellipticity bounds.

    Args:
        catalog_id: One of CATALOG's keys
        parameters: Catalog parameters
        dim: Spatial dimension
        extents: Domain extents; required for x-dependent expressions
        samples: Sample count per dimension for the bounds

    Returns:
        CoefficientField with alpha and beta filled in
    """
    parameters = dict(parameters or {})
    if catalog_id not in CATALOG:
        raise ValueError(f"Unknown catalog id {catalog_id!r}; expected one of {sorted(CATALOG)}")
    evaluator, depends_on_x, symmetric = CATALOG[catalog_id](dim, parameters)
    if extents is None:
        extents = (1.0,) * dim
    draft = CoefficientField(dim=dim, evaluator=evaluator, alpha=0.0, beta=0.0,
                             catalog_id=catalog_id, parameters=parameters,
                             extents=tuple(float(w) for w in extents),
                             depends_on_x=depends_on_x, symmetric=symmetric)
    alpha, beta = ellipticity_bounds(draft, samples)
    if not symmetric:
        symmetric = _sampled_symmetry(draft, samples)
    logger.debug(f"Coefficient {catalog_id} {parameters}: alpha={alpha:.6g}, beta={beta:.6g}")
    return CoefficientField(dim=dim, evaluator=evaluator, alpha=alpha, beta=beta,
                            catalog_id=catalog_id, parameters=parameters,
                            extents=draft.extents, depends_on_x=depends_on_x,
                            symmetric=symmetric)


def _sampled_symmetry(A: CoefficientField, samples: int) -> bool:
    y = _lattice(A.dim, samples, (1.0,) * A.dim, closed=False)
    x = _lattice(A.dim, samples, A.extents, closed=True) if A.depends_on_x else np.zeros((1, A.dim))
    mats = A.matrices(x[:, None, :], y[None, :, :])
    return bool(np.array_equal(mats, np.swapaxes(mats, -1, -2)))


def evaluate(A: CoefficientField, x: Sequence[float], y: Sequence[float]) -> np.ndarray:
    """Evaluate A at a single point; y is wrapped into [0, 1)^dim."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if A.extents is not None:
        upper = np.asarray(A.extents)
        if np.any(x < -DOMAIN_TOL) or np.any(x > upper + DOMAIN_TOL):
            raise ValueError(f"x={x.tolist()} lies outside the domain closure [0, {A.extents}]")
    return A.matrices(x, y)


def _lattice(dim: int, samples: int, extents: Sequence[float], closed: bool) -> np.ndarray:
    if closed:
        axes = [np.linspace(0.0, w, samples) for w in extents]
    else:
        axes = [np.arange(samples) / samples] * dim
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=-1)


def ellipticity_bounds(A: CoefficientField, samples: int) -> Tuple[float, float]:
    """
    Min eigenvalue of the symmetric part and max spectral norm over a sample lattice.

    Raises:
        EllipticityError: if the sampled minimum eigenvalue is not positive
    """
    if samples < 2:
        raise ValueError(f"Need at least 2 samples per dimension, got {samples}")
    y = _lattice(A.dim, samples, (1.0,) * A.dim, closed=False)
    if A.depends_on_x:
        x = _lattice(A.dim, samples, A.extents, closed=True)
        mats = A.matrices(x[:, None, :], y[None, :, :]).reshape(-1, A.dim, A.dim)
    else:
        mats = A.matrices(np.zeros((1, A.dim)), y)
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    alpha = float(np.min(np.linalg.eigvalsh(sym)))
    beta = float(np.max(np.linalg.norm(mats, ord=2, axis=(-2, -1))))
    if not alpha > 0.0:
        raise EllipticityError(
            f"Coefficient {A.catalog_id} is not uniformly elliptic: sampled min eigenvalue {alpha:.6g}"
        )
    return alpha, beta


def shift_steps(dgrid: DomainGrid, cgrid: PeriodicGrid, eps: float) -> np.ndarray:
    """
    Integer cell-index shifts x_i/eps * M for every domain node, shape (n_domain, dim).

    The shift is an exact permutation iff s_d = w_d * M / (eps * (N - 1)) is an
    integer in every dimension.

    Raises:
        GridCompatibilityError: naming the divisibility requirement
    """
    if eps <= 0:
        raise GridCompatibilityError(f"epsilon must be positive, got {eps}")
    if dgrid.dim != cgrid.dim:
        raise GridError(f"Domain dim {dgrid.dim} differs from cell dim {cgrid.dim}")
    M = cgrid.nodes_per_dim
    steps_per_node = []
    for d in range(dgrid.dim):
        s = dgrid.extents[d] * M / (eps * (dgrid.nodes_per_dim - 1))
        s_int = int(round(s))
        if s_int < 1 or abs(s - s_int) > SHIFT_TOL * max(1.0, abs(s)):
            raise GridCompatibilityError(
                f"epsilon not grid-compatible: eps={eps:.12g} requires extent*M/(eps*(N-1)) "
                f"= {dgrid.extents[d]:g}*{M}/({eps:.6g}*{dgrid.nodes_per_dim - 1}) = {s:.6g} "
                f"to be a positive integer in dimension {d + 1}"
            )
        steps_per_node.append(s_int)
    return dgrid.multi_index() * np.asarray(steps_per_node, dtype=np.int64)


def shifted_indices(dgrid: DomainGrid, cgrid: PeriodicGrid, eps: float, sign: int = 1) -> np.ndarray:
    """Cell index of y_j + sign * x_i/eps for every node pair, shape (n_domain, n_cell)."""
    steps = shift_steps(dgrid, cgrid, eps)
    cell = cgrid.multi_index()
    return cgrid.flat_index(cell[None, :, :] + sign * steps[:, None, :])


def shifted_sample(A: CoefficientField, eps: float, dgrid: DomainGrid,
                   cgrid: PeriodicGrid) -> TwoScaleField:
    """Matrix field A(x_i, y_j + x_i/eps mod 1) on every node pair."""
    index = shifted_indices(dgrid, cgrid, eps)
    y_nodes = cgrid.coordinates()
    if A.depends_on_x:
        x = dgrid.coordinates()[:, None, :]
        mats = A.matrices(x, y_nodes[index])
    else:
        cell_mats = A.matrices(np.zeros((1, A.dim)), y_nodes)
        mats = cell_mats[index]
    return TwoScaleField(dgrid, cgrid, mats)


def cell_samples(A: CoefficientField, cgrid: PeriodicGrid, x: Optional[np.ndarray] = None) -> np.ndarray:
    """Matrices at the cell nodes for a fixed x, shape (n_cell, dim, dim)."""
    x = np.zeros((1, A.dim)) if x is None else np.asarray(x, dtype=float).reshape(1, A.dim)
    return A.matrices(x, cgrid.coordinates())


def sup_coefficient(A: CoefficientField, cgrid: PeriodicGrid) -> float:
    """|A|_inf as the max spectral norm over cell nodes (a lower bound of the true sup)."""
    return float(np.max(np.linalg.norm(cell_samples(A, cgrid), ord=2, axis=(-2, -1))))
