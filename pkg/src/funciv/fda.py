"""Time grids, discretised curves and B-spline bases.

Curves are stored as ``n x n_grid`` arrays evaluated on a shared
:class:`TimeGrid`. Integrals against basis functions use the composite
trapezoid rule on that grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, GridMismatchError, InvalidBasisError, InvalidGridError

__all__ = [
    "BasisSystem",
    "FunctionalSample",
    "ScoreMatrix",
    "TimeGrid",
    "build_bspline_basis",
    "integrate",
    "project_scores",
    "reconstruct_coefficient",
    "trapezoid_weights",
]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing observation times inside [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(np.ravel(self.points))
        if pts.size < 2:
            raise InvalidGridError(f"a grid needs at least 2 points, got {pts.size}")
        if not np.all(np.isfinite(pts)):
            raise InvalidGridError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise InvalidGridError("grid points must be strictly increasing")
        if pts[0] < 0.0 or pts[-1] > 1.0:
            raise InvalidGridError("grid points must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, n_grid: int) -> TimeGrid:
        if n_grid < 2:
            raise InvalidGridError(f"a grid needs at least 2 points, got {n_grid}")
        return cls(np.linspace(0.0, 1.0, int(n_grid)))

    @property
    def n_grid(self) -> int:
        return int(self.points.size)

    def same_as(self, other: TimeGrid) -> bool:
        return self is other or np.array_equal(self.points, other.points)

    def __len__(self) -> int:
        return self.n_grid

    def __repr__(self) -> str:
        return f"TimeGrid(n_grid={self.n_grid}, span=[{self.points[0]:g}, {self.points[-1]:g}])"


@dataclass(frozen=True, eq=False)
class FunctionalSample:
    """``n`` curves observed on one grid (rows are subjects)."""

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2 or vals.shape[1] != self.grid.n_grid:
            raise DimensionError(
                f"curve matrix has shape {vals.shape}, expected (n, {self.grid.n_grid})"
            )
        if not np.all(np.isfinite(vals)):
            raise DimensionError("curve values must be finite")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def take(self, rows) -> FunctionalSample:
        """Subset (or resample) subjects."""
        return FunctionalSample(self.values[np.asarray(rows)], self.grid)

    def __repr__(self) -> str:
        return f"FunctionalSample(n={self.n}, n_grid={self.grid.n_grid})"


@dataclass(frozen=True, eq=False)
class BasisSystem:
    K: int
    order: int
    knots: np.ndarray
    eval_matrix: np.ndarray
    quad_weights: np.ndarray
    grid: TimeGrid

    @property
    def degree(self) -> int:
        return self.order - 1

    def __repr__(self) -> str:
        return f"BasisSystem(K={self.K}, order={self.order}, n_grid={self.grid.n_grid})"


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    scores: np.ndarray
    basis: BasisSystem

    def __post_init__(self):
        if self.scores.ndim != 2 or self.scores.shape[1] != self.basis.K:
            raise DimensionError(
                f"score matrix has shape {self.scores.shape}, basis has K={self.basis.K}"
            )


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    """Composite trapezoid weights so that ``w @ f`` approximates the integral of f."""
    h = np.diff(grid.points)
    w = np.zeros(grid.n_grid)
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


def integrate(values, grid: TimeGrid) -> float | np.ndarray:
    """Trapezoid integral over the span of ``grid``.

    A 2-D input integrates each row and returns a vector. A 1-D input is
    summed interval by interval with compensated summation, so functions
    that are linear between grid points integrate to the correctly rounded
    exact value.
    """
    vals = np.asarray(values, dtype=float)
    if vals.shape[-1] != grid.n_grid:
        raise DimensionError(
            f"values have {vals.shape[-1]} grid entries, grid has {grid.n_grid}"
        )
    if vals.ndim == 1:
        h = np.diff(grid.points)
        return math.fsum(h * (vals[:-1] + vals[1:]) / 2.0)
    return vals @ trapezoid_weights(grid)


def clamped_knots(K: int, order: int) -> np.ndarray:
    """Knot vector on [0, 1] with ``K - order`` equally spaced interior knots."""
    n_interior = K - order
    interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    return np.concatenate([np.zeros(order), interior, np.ones(order)])


def _cox_de_boor(x: np.ndarray, knots: np.ndarray, order: int) -> np.ndarray:
    """Evaluate every B-spline of the given order at ``x`` (len(x) x K)."""
    # order-1 indicators; the right end of the domain belongs to the last
    # non-degenerate interval so the final basis function equals 1 there
    last = np.flatnonzero(knots[:-1] < knots[1:])[-1]
    B = np.zeros((x.size, knots.size - 1))
    for i in range(knots.size - 1):
        if knots[i] < knots[i + 1]:
            inside = (x >= knots[i]) & (x < knots[i + 1])
            if i == last:
                inside |= x == knots[i + 1]
            B[inside, i] = 1.0
    for k in range(2, order + 1):
        m = knots.size - k
        nxt = np.zeros((x.size, m))
        for i in range(m):
            left_den = knots[i + k - 1] - knots[i]
            right_den = knots[i + k] - knots[i + 1]
            if left_den > 0:
                nxt[:, i] += (x - knots[i]) / left_den * B[:, i]
            if right_den > 0:
                nxt[:, i] += (knots[i + k] - x) / right_den * B[:, i + 1]
        B = nxt
    return B


# bases are immutable, so identical requests share one instance
_BASIS_CACHE: dict[tuple, BasisSystem] = {}
_BASIS_CACHE_SIZE = 64


def build_bspline_basis(K: int, order: int = 4, grid: TimeGrid | None = None) -> BasisSystem:
    """Clamped B-spline basis with ``K`` functions evaluated on ``grid``.

    Parameters
    ----------
    K : int
        Number of basis functions (not interior knots).
    order : int
        Spline order; 4 gives cubic splines.
    grid : TimeGrid
        Evaluation grid, also used for the trapezoid quadrature weights.
    """
    if grid is None:
        raise InvalidGridError("a TimeGrid is required")
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(grid)
    if order < 2:
        raise InvalidBasisError(f"spline order must be >= 2, got {order}")
    if K < order:
        raise InvalidBasisError(f"K={K} basis functions is fewer than the spline order {order}")
    key = (int(K), int(order), grid.points.tobytes())
    cached = _BASIS_CACHE.get(key)
    if cached is not None:
        return cached
    knots = clamped_knots(K, order)
    basis = BasisSystem(
        K=int(K),
        order=int(order),
        knots=_frozen(knots),
        eval_matrix=_frozen(_cox_de_boor(grid.points, knots, order)),
        quad_weights=_frozen(trapezoid_weights(grid)),
        grid=grid,
    )
    if len(_BASIS_CACHE) >= _BASIS_CACHE_SIZE:
        _BASIS_CACHE.pop(next(iter(_BASIS_CACHE)))
    _BASIS_CACHE[key] = basis
    return basis


def project_scores(sample: FunctionalSample, basis: BasisSystem) -> ScoreMatrix:
    """Basis scores ``int X_i(t) b_k(t) dt`` by the trapezoid rule."""
    if not sample.grid.same_as(basis.grid):
        raise GridMismatchError("sample and basis were built on different grids")
    weighted = basis.quad_weights[:, None] * basis.eval_matrix
    return ScoreMatrix(sample.values @ weighted, basis)


def reconstruct_coefficient(weights, basis: BasisSystem) -> np.ndarray:
    """Coefficient curve ``sum_k w_k b_k(t)`` on the basis grid."""
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != basis.K:
        raise DimensionError(f"got {w.size} weights for a basis with K={basis.K}")
    return basis.eval_matrix @ w
