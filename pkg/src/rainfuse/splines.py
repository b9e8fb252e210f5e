"""Tensor-product cubic B-spline spatial basis.

Used for the radar additive-bias surface and for the displacement fields.
Knots are open-uniform on [0, 1]; cell centers are normalized into [0, 1]^2
by the grid extent so the basis is grid-size independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid


@dataclass(frozen=True)
class TensorBasis:
    k: int
    knots_x: np.ndarray
    knots_y: np.ndarray
    B: np.ndarray = field(repr=False)  # (n_cells, k*k), rows sum to 1

    @property
    def n_components(self) -> int:
        return self.B.shape[1]

    def surface(self, coef: np.ndarray) -> np.ndarray:
        coef = np.asarray(coef, dtype=float)
        if coef.shape != (self.n_components,):
            raise ValueError(
                f"coefficient vector has shape {coef.shape}, expected ({self.n_components},)"
            )
        return self.B @ coef


def _open_uniform_knots(k: int, degree: int) -> np.ndarray:
    n_interior = k - degree - 1
    interior = np.arange(1, n_interior + 1) / (n_interior + 1)
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def bspline_1d(k: int, x: float) -> np.ndarray:
    """All `k` open-uniform B-spline basis values at x in [0, 1].

    Cubic unless k < 4, in which case the degree drops to k - 1.  Values are
    nonnegative and sum to 1 (de Boor recurrence, NURBS-book style).
    """
    if k < 2:
        raise ValueError(f"need at least 2 basis functions, got k={k}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    degree = min(3, k - 1)
    knots = _open_uniform_knots(k, degree)
    # span j such that knots[j] <= x < knots[j+1], clamped so x=1 uses the last span
    j = int(np.searchsorted(knots, x, side="right") - 1)
    j = min(max(j, degree), k - 1)
    vals = np.zeros(degree + 1)
    vals[0] = 1.0
    left = np.zeros(degree + 1)
    right = np.zeros(degree + 1)
    for r in range(1, degree + 1):
        left[r] = x - knots[j + 1 - r]
        right[r] = knots[j + r] - x
        saved = 0.0
        for s in range(r):
            tmp = vals[s] / (right[s + 1] + left[r - s])
            vals[s] = saved + right[s + 1] * tmp
            saved = left[r - s] * tmp
        vals[r] = saved
    out = np.zeros(k)
    out[j - degree : j + 1] = vals
    return out


def tensor_basis(grid: Grid, k: int) -> TensorBasis:
    """Tensor-product basis evaluated at every cell center.

    k is the per-dimension count, so B has k^2 columns (k=3 gives 9, k=5
    gives 25).  k=1 degenerates to a single constant column, which is how
    the spatially-constant model variants are realized.
    """
    if k < 1:
        raise ValueError(f"per-dimension basis count must be >= 1, got k={k}")
    if k == 1:
        ones = np.ones((grid.n, 1))
        return TensorBasis(k=1, knots_x=np.array([0.0, 1.0]), knots_y=np.array([0.0, 1.0]), B=ones)
    degree = min(3, k - 1)
    knots = _open_uniform_knots(k, degree)
    bx = np.stack([bspline_1d(k, (x + 0.5) / grid.nx) for x in range(grid.nx)])
    by = np.stack([bspline_1d(k, (y + 0.5) / grid.ny) for y in range(grid.ny)])
    B = np.empty((grid.n, k * k))
    for i in range(grid.n):
        x, y = i % grid.nx, i // grid.nx
        B[i] = np.outer(bx[x], by[y]).ravel()
    return TensorBasis(k=k, knots_x=knots, knots_y=knots, B=B)
