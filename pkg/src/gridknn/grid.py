"""Training-distribution statistics and hierarchical cell merging.

The distribution job counts training points per cell and is the side
input every later stage consumes. Merging is the baseline method's
preprocessing step: deficient cells (count < k) are absorbed bottom-up
into aligned power-of-two blocks, following quad-tree style hierarchical
space decomposition generalized to 2^d children per parent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import IngestionError, ParseError
from .geometry import BoundaryShape, CellId, GridSpec, Point, cell_of, max_dist_to_cell
from .runtime import JobSpec, execute


@dataclass(frozen=True)
class CellStats:
    """Per-cell training-point counts; absent cells hold zero."""

    counts: dict[CellId, int]
    total: int

    def to_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# cell_id\tcount\n")
            for cell in sorted(self.counts):
                fh.write(f"{cell}\t{self.counts[cell]}\n")

    @classmethod
    def from_tsv(cls, path: str | Path) -> "CellStats":
        counts: dict[CellId, int] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ParseError(f"{path}:{lineno}: expected cell_id<TAB>count")
                try:
                    counts[int(parts[0])] = int(parts[1])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
        return cls(counts=counts, total=sum(counts.values()))


@dataclass(frozen=True)
class MergeStats:
    """Outcome summary of one merging pass."""

    elapsed_s: float
    merged_base_cells: int
    pct_of_total: float
    max_region_base_cells: int

    CSV_HEADER = "elapsed_ms,merged_cells,pct,max_region"

    def csv_row(self) -> str:
        return (
            f"{self.elapsed_s * 1e3:.3f},{self.merged_base_cells},"
            f"{self.pct_of_total:.6f},{self.max_region_base_cells}"
        )


@dataclass
class MergedGrid:
    """Partition of the base grid into aligned power-of-two blocks.

    A region is identified by its anchor: the smallest linear cell id it
    contains. Unmerged base cells are implicit level-0 regions; only
    merged blocks (level >= 1) are stored explicitly.
    """

    grid: GridSpec
    base_counts: dict[CellId, int]
    region_level: dict[int, int]
    region_count: dict[int, int]
    _levels: tuple[int, ...] = field(init=False, repr=False)
    _dense_map: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        self._levels = tuple(sorted(set(self.region_level.values())))

    def _align(self, cell: CellId, level: int) -> int:
        g = self.grid.g
        mask = ~((1 << level) - 1)
        anchor = 0
        stride = 1
        for _ in range(self.grid.d):
            anchor += (cell % g & mask) * stride
            cell //= g
            stride *= g
        return anchor

    def region_of(self, cell: CellId) -> int:
        """Region id (anchor cell) containing a base cell."""
        for level in self._levels:
            anchor = self._align(cell, level)
            if self.region_level.get(anchor) == level:
                return anchor
        return cell

    def region_level_of(self, region: int) -> int:
        return self.region_level.get(region, 0)

    def region_count_of(self, region: int) -> int:
        if region in self.region_count:
            return self.region_count[region]
        return self.base_counts.get(region, 0)

    def region_box(self, region: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Closed axis-aligned box [lo, hi] of a region."""
        g = self.grid.g
        side = 1 << self.region_level_of(region)
        lo = []
        hi = []
        cell = region
        for _ in range(self.grid.d):
            c = cell % g
            lo.append(c / g)
            hi.append((c + side) / g)
            cell //= g
        return tuple(lo), tuple(hi)

    def regions(self) -> Iterator[tuple[int, int, int]]:
        """Yield every final region as (anchor, level, count); enumerates
        all base cells, so intended for inspection and tests."""
        for anchor in sorted(self.region_level):
            yield anchor, self.region_level[anchor], self.region_count[anchor]
        for cell in range(self.grid.n_cells):
            if self.region_of(cell) == cell and cell not in self.region_level:
                yield cell, 0, self.base_counts.get(cell, 0)

    def region_counts(self, stats: CellStats) -> dict[int, int]:
        """Re-key per-cell counts to regions (merged regions sum their
        member cells)."""
        out: dict[int, int] = {}
        for cell, count in stats.counts.items():
            region = self.region_of(cell)
            out[region] = out.get(region, 0) + count
        return out

    def dense_region_map(self) -> np.ndarray:
        """Base-cell -> region anchor lookup table of size g^d (cached)."""
        if self._dense_map is None:
            grid = self.grid
            table = np.arange(grid.n_cells, dtype=np.int64)
            offsets_cache: dict[int, np.ndarray] = {}
            for anchor, level in self.region_level.items():
                offsets = offsets_cache.get(level)
                if offsets is None:
                    side = 1 << level
                    axes = np.meshgrid(*([np.arange(side)] * grid.d), indexing="ij")
                    offsets = np.zeros(side ** grid.d, dtype=np.int64)
                    stride = 1
                    for ax in axes:
                        offsets += ax.ravel() * stride
                        stride *= grid.g
                    offsets_cache[level] = offsets
                table[anchor + offsets] = anchor
            self._dense_map = table
        return self._dense_map


def compute_distribution(
    training: Iterable[Point],
    grid: GridSpec,
    *,
    threads: int = 1,
) -> CellStats:
    """Count training points per cell as a map(point -> (cell, 1)) /
    reduce(sum) job on the runtime engine."""

    def map_point(point: Point, _side):
        try:
            yield cell_of(point.coords, grid), 1
        except Exception as exc:
            raise IngestionError(f"training point {point.id}: {exc}") from exc

    def reduce_sum(key, values, _side):
        yield key, sum(values)

    job = JobSpec("distribution", map_point, reduce_sum, partitions=threads)
    pairs = execute(job, training)
    counts = dict(pairs)
    return CellStats(counts=counts, total=sum(counts.values()))


def _halve(arr: np.ndarray, op) -> np.ndarray:
    """Aggregate 2^d sibling blocks into their parents along every axis."""
    shape = []
    for m in arr.shape:
        shape.extend((m // 2, 2))
    view = arr.reshape(shape)
    axes = tuple(range(1, 2 * arr.ndim, 2))
    return op(view, axis=axes)


def merge_cells(stats: CellStats, k: int, grid: GridSpec) -> tuple[MergedGrid, MergeStats]:
    """Bottom-up merge of deficient cells into aligned 2^d-ary blocks.

    Starting from the base cells, any parent block with at least one
    deficient child (count < k at the child's current resolution) absorbs
    all of its 2^d children; still-deficient merged blocks keep rising
    until they reach count >= k or the root. When the training total is
    at least k, every final region therefore holds at least k points.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = grid.merge_levels()
    started = time.perf_counter()
    g, d = grid.g, grid.d

    flat = np.zeros(grid.n_cells, dtype=np.int64)
    if stats.counts:
        cells = np.fromiter(stats.counts.keys(), dtype=np.int64, count=len(stats.counts))
        vals = np.fromiter(stats.counts.values(), dtype=np.int64, count=len(stats.counts))
        flat[cells] = vals
    level_counts = [flat.reshape((g,) * d)]
    deficient = level_counts[0] < k

    merged_masks: list[np.ndarray | None] = [None]  # index by level
    for level in range(1, n + 1):
        counts_here = _halve(level_counts[level - 1], np.sum)
        level_counts.append(counts_here)
        merged = _halve(deficient, np.any)
        merged_masks.append(merged)
        deficient = merged & (counts_here < k)
        if not deficient.any():
            break

    top = len(merged_masks) - 1
    region_level: dict[int, int] = {}
    region_count: dict[int, int] = {}
    merged_base_cells = 0
    max_level = 0
    # Axis a of the reshaped arrays holds coordinate axis d-1-a, so block
    # indices convert to anchors through the reversed stride vector.
    strides_rev = np.array([g ** (d - 1 - a) for a in range(d)], dtype=np.int64)
    covered = np.zeros_like(merged_masks[top], dtype=bool) if top >= 1 else None
    for level in range(top, 0, -1):
        final_here = merged_masks[level] & ~covered
        if final_here.any():
            max_level = max(max_level, level)
            block_cells = 1 << (d * level)
            for idx in np.argwhere(final_here):
                anchor = int((idx << level) @ strides_rev)
                region_level[anchor] = level
                region_count[anchor] = int(level_counts[level][tuple(idx)])
                merged_base_cells += block_cells
        covered = np.repeat(covered | final_here, 2, axis=0)
        for axis in range(1, d):
            covered = np.repeat(covered, 2, axis=axis)

    merged = MergedGrid(
        grid=grid,
        base_counts=stats.counts,
        region_level=region_level,
        region_count=region_count,
    )
    elapsed = time.perf_counter() - started
    merge_stats = MergeStats(
        elapsed_s=elapsed,
        merged_base_cells=merged_base_cells,
        pct_of_total=merged_base_cells / grid.n_cells,
        max_region_base_cells=1 << (d * max_level),
    )
    return merged, merge_stats


def count_in_shape_lower_bound(shape: BoundaryShape, stats: CellStats, grid: GridSpec) -> int:
    """Certified lower bound on training points inside a ball: the sum of
    counts over cells lying entirely within it (farthest corner within the
    radius). Never exceeds the true number of points at distance <= radius.
    """
    total = 0
    for cell, count in stats.counts.items():
        if max_dist_to_cell(shape.center, cell, grid) <= shape.radius:
            total += count
    return total
