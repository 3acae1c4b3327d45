"""Geometric kernel: distances, cell addressing, and sphere/box arithmetic.

Works for any dimension d >= 1 over the normalized target space [0, 1]^d,
decomposed into g equal cells per axis. Cells are addressed by a linear
index with axis 0 least significant. All functions here are pure and safe
to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatchError, OutOfSpaceError

CellId = int


@dataclass(frozen=True, slots=True)
class Point:
    """A dataset point: unique id, coordinates in [0, 1]^d, and an optional
    class label (present iff the point belongs to the training set)."""

    id: int
    coords: tuple[float, ...]
    label: str | None = None


@dataclass(frozen=True, slots=True)
class GridSpec:
    """Equal-sized decomposition of [0, 1]^d into g cells per axis."""

    d: int
    g: int

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.d}")
        if self.g < 1:
            raise ConfigError(f"cells per axis must be >= 1, got {self.g}")
        if self.g ** self.d >= 2 ** 63:
            raise ConfigError(
                f"grid {self.g}^{self.d} exceeds the 63-bit cell index space "
                f"(cell ids are held in signed 64-bit arrays)"
            )

    @property
    def cell_width(self) -> float:
        return 1.0 / self.g

    @property
    def n_cells(self) -> int:
        return self.g ** self.d

    def merge_levels(self) -> int:
        """Return n such that g = 2^n, or raise if g is not a power of two
        (hierarchical merging needs aligned halvings)."""
        n = self.g.bit_length() - 1
        if 1 << n != self.g:
            raise ConfigError(
                f"cells per axis must be a power of two for merging, got {self.g}"
            )
        return n


@dataclass(frozen=True, slots=True)
class BoundaryShape:
    """Search ball: an interval/circle/sphere/hypersphere centered at a
    query point, in target-space units."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ConfigError(f"radius must be >= 0, got {self.radius}")
        for x in self.center:
            if not 0.0 <= x <= 1.0:
                raise OutOfSpaceError(f"shape center coordinate {x} outside [0, 1]")


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Euclidean distance between two coordinate vectors of equal length."""
    if len(a) != len(b):
        raise DimensionMismatchError(f"coordinate lengths differ: {len(a)} vs {len(b)}")
    acc = 0.0
    for x, y in zip(a, b):
        diff = x - y
        acc += diff * diff
    return math.sqrt(acc)


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense (m, n) matrix of Euclidean distances between the rows of two
    (m, d) and (n, d) arrays.

    Every distance in the package flows through this one formulation so
    that identical point pairs always produce bit-identical floats.
    """
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"coordinate lengths differ: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.square(diff).sum(axis=-1))


def cell_of(coords: Sequence[float], grid: GridSpec) -> CellId:
    """Linear index of the cell containing a coordinate vector.

    Each cell is half-open per axis; the global upper face (coordinate
    exactly 1.0) clamps into the last cell.
    """
    if len(coords) != grid.d:
        raise DimensionMismatchError(f"expected {grid.d} coordinates, got {len(coords)}")
    g = grid.g
    linear = 0
    stride = 1
    for x in coords:
        if not 0.0 <= x <= 1.0:
            raise OutOfSpaceError(f"coordinate {x} outside the [0, 1] target space")
        c = int(x * g)
        if c >= g:
            c = g - 1
        linear += c * stride
        stride *= g
    return linear


def cell_axes(cell: CellId, grid: GridSpec) -> tuple[int, ...]:
    """Per-axis indices of a linear cell id (axis 0 least significant)."""
    if not 0 <= cell < grid.n_cells:
        raise ConfigError(f"cell {cell} outside grid of {grid.n_cells} cells")
    g = grid.g
    axes = []
    for _ in range(grid.d):
        axes.append(cell % g)
        cell //= g
    return tuple(axes)


def cell_from_axes(axes: Sequence[int], grid: GridSpec) -> CellId:
    """Linear cell id from per-axis indices; inverse of cell_axes."""
    if len(axes) != grid.d:
        raise DimensionMismatchError(f"expected {grid.d} axis indices, got {len(axes)}")
    linear = 0
    stride = 1
    for c in axes:
        if not 0 <= c < grid.g:
            raise ConfigError(f"axis index {c} outside [0, {grid.g})")
        linear += c * stride
        stride *= grid.g
    return linear


def cell_box(cell: CellId, grid: GridSpec) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Closed axis-aligned box [lo, hi] of a cell."""
    axes = cell_axes(cell, grid)
    g = grid.g
    lo = tuple(c / g for c in axes)
    hi = tuple((c + 1) / g for c in axes)
    return lo, hi


def min_dist_to_cell(center: Sequence[float], cell: CellId, grid: GridSpec) -> float:
    """Distance from a point to the nearest point of a cell's closed box;
    zero when the point lies inside the cell."""
    lo, hi = cell_box(cell, grid)
    acc = 0.0
    for x, l, h in zip(center, lo, hi):
        gap = max(max(l - x, x - h), 0.0)
        acc += gap * gap
    return math.sqrt(acc)


def max_dist_to_cell(center: Sequence[float], cell: CellId, grid: GridSpec) -> float:
    """Distance from a point to the farthest corner of a cell's box.

    A cell lies entirely inside a ball iff this distance is <= the radius.
    """
    lo, hi = cell_box(cell, grid)
    acc = 0.0
    for x, l, h in zip(center, lo, hi):
        far = max(abs(x - l), abs(h - x))
        acc += far * far
    return math.sqrt(acc)


def overlapped_cells(shape: BoundaryShape, home: CellId, grid: GridSpec) -> list[CellId]:
    """All cells other than the home cell whose box intersects the open
    ball of the shape, in ascending linear order.

    Enumeration is bounded to the index window of +-ceil(radius / cell
    width) around the home cell, then filtered by the exact minimum
    distance test (strict: a tangent box contributes no interior points).
    """
    r = shape.radius
    if len(shape.center) != grid.d:
        raise DimensionMismatchError(
            f"expected {grid.d} coordinates, got {len(shape.center)}"
        )
    if r <= 0.0:
        return []
    g = grid.g
    r2 = r * r
    home_axes = cell_axes(home, grid)
    reach = math.ceil(r * g)

    # Per axis: candidate indices with their squared gap contributions.
    per_axis: list[list[tuple[int, float]]] = []
    for i in range(grid.d):
        x = shape.center[i]
        first = max(home_axes[i] - reach, 0)
        last = min(home_axes[i] + reach, g - 1)
        opts = []
        for c in range(first, last + 1):
            lo = c / g
            hi = (c + 1) / g
            gap = max(max(lo - x, x - hi), 0.0)
            opts.append((c, gap * gap))
        per_axis.append(opts)

    out: list[CellId] = []
    d = grid.d

    def descend(axis: int, linear: int, stride: int, acc: float) -> None:
        if axis == d:
            if linear != home:
                out.append(linear)
            return
        for c, gap2 in per_axis[axis]:
            total = acc + gap2
            if total < r2:
                descend(axis + 1, linear + c * stride, stride * g, total)

    descend(0, 0, 1, 0.0)
    out.sort()
    return out
