"""Regular lattice geometry: rook adjacency, displacement-shifted indexing.

Cells are indexed row-major with (x=0, y=0) at the south-west corner, so
``i = y * nx + x``.  All functions here are pure; ``Grid`` is immutable and
safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Equirectangular degree lengths used for the lon/lat <-> cell mapping.
KM_PER_DEG_LAT = 110.574


@dataclass(frozen=True)
class Grid:
    """Regular lattice with square cells of `cell_size_km` kilometres."""

    nx: int
    ny: int
    cell_size_km: float = 1.0
    origin_lon: float = 0.0
    origin_lat: float = 0.0
    dt_minutes: float = 10.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if self.cell_size_km <= 0:
            raise ValueError(f"cell_size_km must be positive, got {self.cell_size_km}")
        if self.dt_minutes <= 0:
            raise ValueError(f"dt_minutes must be positive, got {self.dt_minutes}")

    @property
    def n(self) -> int:
        return self.nx * self.ny

    def index(self, x: int, y: int) -> int:
        return y * self.nx + x

    def coords(self, i: int) -> tuple[int, int]:
        return i % self.nx, i // self.nx

    @property
    def deg_per_cell_lon(self) -> float:
        km_per_deg_lon = 111.320 * math.cos(math.radians(self.origin_lat))
        return self.cell_size_km / km_per_deg_lon

    @property
    def deg_per_cell_lat(self) -> float:
        return self.cell_size_km / KM_PER_DEG_LAT

    def lonlat_bounds(self) -> tuple[float, float, float, float]:
        """(min_lon, min_lat, max_lon, max_lat) of the full lattice."""
        return (
            self.origin_lon,
            self.origin_lat,
            self.origin_lon + self.nx * self.deg_per_cell_lon,
            self.origin_lat + self.ny * self.deg_per_cell_lat,
        )

    def contains_lonlat(self, lon: float, lat: float) -> bool:
        lo, la, hi, ha = self.lonlat_bounds()
        return lo <= lon <= hi and la <= lat <= ha

    def cell_of_lonlat(self, lon: float, lat: float) -> int:
        """Index of the cell containing (lon, lat); boundary points snap inward."""
        if not self.contains_lonlat(lon, lat):
            raise ValueError(f"point ({lon}, {lat}) outside grid bounding box")
        x = min(int((lon - self.origin_lon) / self.deg_per_cell_lon), self.nx - 1)
        y = min(int((lat - self.origin_lat) / self.deg_per_cell_lat), self.ny - 1)
        return self.index(x, y)

    def cell_center_lonlat(self, i: int) -> tuple[float, float]:
        x, y = self.coords(i)
        return (
            self.origin_lon + (x + 0.5) * self.deg_per_cell_lon,
            self.origin_lat + (y + 0.5) * self.deg_per_cell_lat,
        )


@dataclass(frozen=True)
class Displacement:
    """Integer cell offset (east, north)."""

    dx: int
    dy: int


def neighbors(grid: Grid, i: int) -> list[int]:
    """Rook-adjacent cell indices of `i`, in ascending index order."""
    if not 0 <= i < grid.n:
        raise IndexError(f"cell index {i} out of range for {grid.nx}x{grid.ny} grid")
    x, y = grid.coords(i)
    out = []
    if y > 0:
        out.append(i - grid.nx)
    if x > 0:
        out.append(i - 1)
    if x < grid.nx - 1:
        out.append(i + 1)
    if y < grid.ny - 1:
        out.append(i + grid.nx)
    return out


def adjacency_csr(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rook adjacency in CSR form: (ptr, idx, degree)."""
    ptr = np.zeros(grid.n + 1, dtype=np.int64)
    lists = [neighbors(grid, i) for i in range(grid.n)]
    ptr[1:] = np.cumsum([len(l) for l in lists])
    idx = np.fromiter((j for l in lists for j in l), dtype=np.int64, count=int(ptr[-1]))
    deg = (ptr[1:] - ptr[:-1]).astype(np.float64)
    return ptr, idx, deg


def shifted_index(grid: Grid, i: int, d: Displacement) -> int:
    """Cell at `i`'s coordinates plus (dx, dy), clamped into the lattice.

    Clamping keeps the displaced lookup total; the boundary policy lives
    here only so it can be swapped in one place.
    """
    if not 0 <= i < grid.n:
        raise IndexError(f"cell index {i} out of range for {grid.nx}x{grid.ny} grid")
    x, y = grid.coords(i)
    xs = min(max(x + d.dx, 0), grid.nx - 1)
    ys = min(max(y + d.dy, 0), grid.ny - 1)
    return grid.index(xs, ys)


def shifted_indices(grid: Grid, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Vectorized `shifted_index` for per-cell displacement arrays."""
    i = np.arange(grid.n)
    x = i % grid.nx + np.asarray(dx, dtype=np.int64)
    y = i // grid.nx + np.asarray(dy, dtype=np.int64)
    np.clip(x, 0, grid.nx - 1, out=x)
    np.clip(y, 0, grid.ny - 1, out=y)
    return y * grid.nx + x


def cells_per_ms(grid: Grid) -> float:
    """Cells of displacement per time step produced by 1 m/s of motion."""
    return grid.dt_minutes * 60.0 / (grid.cell_size_km * 1000.0)
