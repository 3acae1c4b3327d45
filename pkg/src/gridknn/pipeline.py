"""The staged classification pipeline.

Five jobs, each executed on the runtime engine: distribution (count
training points per locality unit), primitive (candidate neighbors inside
each unit), update (grow the search ball where needed, copy candidates to
overlapped units, compute per-unit refinements), unify (merge the per-unit
list instances into one final list per point), classify (majority vote).

Two methods share the machinery: the radius-growth method works directly
on base grid cells, while the baseline first merges deficient cells into
quad-tree regions and uses those regions as its locality units. Both are
exact; on identical inputs they produce identical classifications.

Neighbor list entries travel between stages as plain ``(distance,
neighbor_id, label)`` tuples sorted ascending, which is also the tie rule:
equal distances order by ascending neighbor id.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, IngestionError, UnsatisfiableKError
from .geometry import GridSpec, Point, cell_of, pairwise_distances
from .grid import CellStats, MergedGrid, MergeStats, compute_distribution, merge_cells
from .runtime import JobSpec, execute, execute_dual_input

Entry = tuple[float, int, str]

PHASES = ("distribution", "merge", "primitive", "update", "integrate", "classify")

# Pairwise distance blocks are chunked to roughly this many matrix elements.
_BLOCK_ELEMS = 4_000_000
# Overlap windows up to this many cells are enumerated directly; larger
# radii fall back to scanning the (sparse) occupied-unit arrays instead.
_WINDOW_LIMIT = 256


@dataclass(frozen=True, slots=True)
class NeighborEntry:
    """One neighbor in a k-NN list."""

    neighbor_id: int
    distance: float
    label: str


@dataclass(frozen=True, slots=True)
class KnnList:
    """At most k neighbors, strictly sorted by (distance, neighbor_id)."""

    entries: tuple[NeighborEntry, ...]

    def __post_init__(self) -> None:
        keys = [(e.distance, e.neighbor_id) for e in self.entries]
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise ValueError("entries must be strictly sorted by (distance, id)")

    @classmethod
    def from_wire(cls, entries: Sequence[Entry]) -> "KnnList":
        return cls(tuple(NeighborEntry(nid, dist, label) for dist, nid, label in entries))

    def to_wire(self) -> tuple[Entry, ...]:
        return tuple((e.distance, e.neighbor_id, e.label) for e in self.entries)


@dataclass(frozen=True, slots=True)
class CandidateRecord:
    """An input point mid-pipeline: its current neighbor list, home unit,
    and whether later stages may still update the list."""

    point_id: int
    coords: tuple[float, ...]
    home_unit: int
    entries: tuple[Entry, ...]
    complete: bool


@dataclass(frozen=True, slots=True)
class Classification:
    point_id: int
    label: str


@dataclass(frozen=True)
class PipelineConfig:
    method: str
    k: int
    grid: GridSpec
    threads: int = 1
    inject_fault: str | None = None
    collect_diagnostics: bool = False

    def __post_init__(self) -> None:
        if self.method not in ("kdann", "kdann+"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.method == "kdann":
            self.grid.merge_levels()


@dataclass
class RunResult:
    classifications: list[Classification]
    knn_lists: dict[int, tuple[Entry, ...]]
    timings: list[tuple[str, float]]
    merge_stats: MergeStats | None
    distance_computations: int
    diagnostics: dict[int, tuple] | None = None


class _Counter:
    """Thread-safe tally; the total is deterministic because the set of
    counted work items does not depend on scheduling."""

    __slots__ = ("value", "_lock")

    def __init__(self) -> None:
        self.value = 0
        self._lock = threading.Lock()

    def add(self, n: int) -> None:
        with self._lock:
            self.value += n


class Partition:
    """The pipeline's locality units: base cells or merged regions.

    Holds the occupied units' boxes and counts as dense arrays so that
    per-point overlap tests and radius growth vectorize, plus a direct
    window-enumeration path for small radii.
    """

    def __init__(
        self,
        grid: GridSpec,
        counts: dict[int, int],
        merged: MergedGrid | None = None,
    ):
        self.grid = grid
        self.counts = counts
        self.merged = merged
        self.total = sum(counts.values())
        keys = sorted(counts)
        self.keys = np.asarray(keys, dtype=np.int64)
        self.count_arr = np.asarray([counts[u] for u in keys], dtype=np.int64)
        if merged is None:
            g = grid.g
            axes = (self.keys[:, None] // np.array([g ** i for i in range(grid.d)])) % g
            self.lo = axes / g
            self.hi = (axes + 1) / g
            self._cell_to_unit = None
        else:
            lo_rows = []
            hi_rows = []
            for anchor in keys:
                lo, hi = merged.region_box(anchor)
                lo_rows.append(lo)
                hi_rows.append(hi)
            shape = (len(keys), grid.d)
            self.lo = np.asarray(lo_rows, dtype=np.float64).reshape(shape)
            self.hi = np.asarray(hi_rows, dtype=np.float64).reshape(shape)
            self._cell_to_unit = merged.dense_region_map()

    @classmethod
    def from_cells(cls, grid: GridSpec, stats: CellStats) -> "Partition":
        return cls(grid, dict(stats.counts))

    @classmethod
    def from_regions(cls, grid: GridSpec, merged: MergedGrid, stats: CellStats) -> "Partition":
        return cls(grid, merged.region_counts(stats), merged=merged)

    def home_of(self, coords: Sequence[float]) -> int:
        cell = cell_of(coords, self.grid)
        if self._cell_to_unit is None:
            return cell
        return int(self._cell_to_unit[cell])

    def _window_cells(self, center: Sequence[float], r: float) -> list[int] | None:
        """Cells whose box lies within r of the center, enumerated from the
        index window of +-ceil(r/width); None when the window is too large."""
        g = self.grid.g
        d = self.grid.d
        reach = math.ceil(r * g)
        spans = []
        window = 1
        for x in center:
            ax = int(x * g)
            if ax >= g:
                ax = g - 1
            first = max(ax - reach, 0)
            last = min(ax + reach, g - 1)
            spans.append((first, last))
            window *= last - first + 1
            if window > _WINDOW_LIMIT:
                return None
        r2 = r * r
        per_axis: list[list[tuple[int, float]]] = []
        for i in range(d):
            x = center[i]
            opts = []
            for c in range(spans[i][0], spans[i][1] + 1):
                gap = max(max(c / g - x, x - (c + 1) / g), 0.0)
                opts.append((c, gap * gap))
            per_axis.append(opts)
        out: list[int] = []

        def descend(axis: int, linear: int, stride: int, acc: float) -> None:
            if axis == d:
                out.append(linear)
                return
            for c, gap2 in per_axis[axis]:
                total = acc + gap2
                if total < r2:
                    descend(axis + 1, linear + c * stride, stride * g, total)

        descend(0, 0, 1, 0.0)
        return out

    def _unit_gap2(self, center: Sequence[float], unit: int) -> float:
        g = self.grid.g
        if self.merged is not None:
            lo, hi = self.merged.region_box(unit)
        else:
            axes = []
            cell = unit
            for _ in range(self.grid.d):
                axes.append(cell % g)
                cell //= g
            lo = tuple(c / g for c in axes)
            hi = tuple((c + 1) / g for c in axes)
        acc = 0.0
        for x, l, h in zip(center, lo, hi):
            gap = max(max(l - x, x - h), 0.0)
            acc += gap * gap
        return acc

    def _ball_inside_home(self, center: Sequence[float], home: int, r: float) -> bool:
        """True when every face of the home unit's box is at least r away,
        so no other unit's box can reach the open ball."""
        g = self.grid.g
        if self.merged is None:
            for x in center:
                c = int(x * g)
                if c >= g:
                    c = g - 1
                if x - c / g < r or (c + 1) / g - x < r:
                    return False
            return True
        lo, hi = self.merged.region_box(home)
        for x, l, h in zip(center, lo, hi):
            if x - l < r or h - x < r:
                return False
        return True

    def overlap_targets(self, center: Sequence[float], home: int, r: float) -> list[int]:
        """Occupied units other than home whose box intersects the open
        ball of radius r, ascending."""
        if r <= 0.0 or not self.counts:
            return []
        if self._ball_inside_home(center, home, r):
            return []
        cells = self._window_cells(center, r)
        if cells is not None:
            if self._cell_to_unit is None:
                return sorted(
                    c for c in cells if c != home and self.counts.get(c, 0) > 0
                )
            r2 = r * r
            units = {int(self._cell_to_unit[c]) for c in cells}
            units.discard(home)
            return sorted(
                u
                for u in units
                if self.counts.get(u, 0) > 0 and self._unit_gap2(center, u) < r2
            )
        c = np.asarray(center, dtype=np.float64)
        gap = np.maximum(np.maximum(self.lo - c, c - self.hi), 0.0)
        dist2 = np.square(gap).sum(axis=1)
        hit = self.keys[dist2 < r * r]
        return [int(u) for u in hit if u != home]

    def growth_radius(self, center: Sequence[float], r0: float, k: int) -> float:
        """Smallest radius of the form r0 + m * cell_width whose certified
        coverage (training count over fully contained units) reaches k."""
        if self.total < k:
            raise UnsatisfiableKError(
                f"only {self.total} training points exist; cannot cover k={k}"
            )
        c = np.asarray(center, dtype=np.float64)
        far = np.maximum(np.abs(c - self.lo), np.abs(self.hi - c))
        contain_r = np.sqrt(np.square(far).sum(axis=1))
        order = np.argsort(contain_r, kind="stable")
        cum = self.count_arr[order].cumsum()
        pos = int(np.searchsorted(cum, k, side="left"))
        r_star = float(contain_r[order[pos]])
        if r_star <= r0:
            return r0
        w = self.grid.cell_width
        m = max(0, math.ceil((r_star - r0) / w))
        while m > 0 and r0 + (m - 1) * w >= r_star:
            m -= 1
        while r0 + m * w < r_star:
            m += 1
        return r0 + m * w


def select_k_rows(
    dists: np.ndarray,
    ids: np.ndarray,
    labels: Sequence[str],
    k: int,
) -> list[tuple[Entry, ...]]:
    """Per row of a distance matrix, the k smallest entries under the
    (distance, neighbor_id) order, as wire tuples."""
    kk = min(k, dists.shape[1])
    ids_b = np.broadcast_to(ids, dists.shape)
    order = np.lexsort((ids_b, dists), axis=-1)[:, :kk]
    dsel = np.take_along_axis(dists, order, axis=1).tolist()
    osel = order.tolist()
    id_list = ids.tolist()
    return [
        tuple((dv, id_list[j], labels[j]) for dv, j in zip(drow, orow))
        for drow, orow in zip(dsel, osel)
    ]


def merge_entries(a: tuple[Entry, ...], b: tuple[Entry, ...], k: int) -> tuple[Entry, ...]:
    """Merge two sorted entry tuples, keeping the k smallest. Neighbor ids
    never repeat across the two sides (they come from disjoint units)."""
    if not a:
        return b[:k]
    if not b:
        return a[:k]
    return tuple(sorted(a + b)[:k])


def majority_label(entries: Sequence[Entry]) -> str:
    """Majority class of a neighbor list. Ties go to the class of the
    nearest neighbor among the tied classes, then to the smallest label."""
    tally: dict[str, int] = {}
    for _, _, label in entries:
        tally[label] = tally.get(label, 0) + 1
    top = max(tally.values())
    tied = {label for label, n in tally.items() if n == top}
    if len(tied) == 1:
        return next(iter(tied))
    nearest: dict[str, float] = {}
    for dist, _, label in entries:
        if label in tied and label not in nearest:
            nearest[label] = dist
    return min(tied, key=lambda label: (nearest[label], label))


def _map_training(partition: Partition):
    def map_fn(point: Point, _side):
        try:
            yield partition.home_of(point.coords), (point.id, point.coords, point.label)
        except (IngestionError, UnsatisfiableKError):
            raise
        except Exception as exc:
            raise IngestionError(f"training point {point.id}: {exc}") from exc

    return map_fn


def job1_distribution(
    training: Iterable[Point], grid: GridSpec, *, threads: int = 1
) -> CellStats:
    """Count training points per base cell (the side input of later jobs)."""
    return compute_distribution(training, grid, threads=threads)


def job2_primitive(
    input_points: Iterable[Point],
    training: Iterable[Point],
    partition: Partition,
    k: int,
    *,
    threads: int = 1,
    counter: _Counter | None = None,
) -> list[CandidateRecord]:
    """Candidate neighbors for every input point from the training points
    sharing its locality unit."""
    counter = counter or _Counter()

    def map_input(point: Point, _side):
        try:
            yield partition.home_of(point.coords), (point.id, point.coords)
        except (IngestionError, UnsatisfiableKError):
            raise
        except Exception as exc:
            raise IngestionError(f"input point {point.id}: {exc}") from exc

    def reduce_unit(unit, tagged, _side):
        t_ids: list[int] = []
        t_coords: list[tuple[float, ...]] = []
        t_labels: list[str] = []
        inputs: list[tuple[int, tuple[float, ...]]] = []
        for tag, value in tagged:
            if tag == 0:
                t_ids.append(value[0])
                t_coords.append(value[1])
                t_labels.append(value[2])
            else:
                inputs.append(value)
        if not inputs:
            return
        if not t_ids:
            for pid, coords in inputs:
                yield CandidateRecord(pid, coords, unit, (), False)
            return
        t_arr = np.asarray(t_coords, dtype=np.float64)
        id_arr = np.asarray(t_ids, dtype=np.int64)
        i_arr = np.asarray([coords for _, coords in inputs], dtype=np.float64)
        step = max(1, _BLOCK_ELEMS // len(t_ids))
        for lo in range(0, len(inputs), step):
            block = i_arr[lo : lo + step]
            dists = pairwise_distances(block, t_arr)
            counter.add(dists.size)
            for (pid, coords), entries in zip(
                inputs[lo : lo + step], select_k_rows(dists, id_arr, t_labels, k)
            ):
                yield CandidateRecord(pid, coords, unit, entries, False)

    job = JobSpec(
        "primitive",
        _map_training(partition),
        reduce_unit,
        map_fn_b=map_input,
        partitions=threads,
    )
    return execute_dual_input(job, training, input_points)


def job3_update(
    candidates: Iterable[CandidateRecord],
    training: Iterable[Point],
    partition: Partition,
    k: int,
    *,
    threads: int = 1,
    counter: _Counter | None = None,
    inject_fault: str | None = None,
    diagnostics: dict[int, tuple] | None = None,
) -> list[tuple[int, tuple[Entry, ...]]]:
    """Grow each candidate's search ball until it certifiably covers k
    training points, copy the candidate to every overlapped occupied unit,
    and refine the copies against those units' training points.

    Emits one (point_id, entries) list instance per copy; points whose
    ball stays inside their home unit pass through complete.
    """
    counter = counter or _Counter()
    width = partition.grid.cell_width

    def map_candidate(cand: CandidateRecord, _side):
        entries = cand.entries
        r = entries[-1][0] if entries else width
        expanded = False
        if len(entries) < k:
            try:
                r = partition.growth_radius(cand.coords, r, k)
            except UnsatisfiableKError as exc:
                raise UnsatisfiableKError(f"point {cand.point_id}: {exc}") from exc
            expanded = True
        if inject_fault == "skip-overlap":
            targets: list[int] = []
        else:
            targets = partition.overlap_targets(cand.coords, cand.home_unit, r)
        if diagnostics is not None:
            diagnostics[cand.point_id] = (cand.home_unit, tuple(targets), r, expanded)
        if targets:
            wire = (cand.point_id, cand.coords, entries, False)
            for unit in targets:
                yield unit, wire
        else:
            yield cand.home_unit, (cand.point_id, cand.coords, entries, True)

    def reduce_unit(unit, tagged, _side):
        t_ids: list[int] = []
        t_coords: list[tuple[float, ...]] = []
        t_labels: list[str] = []
        pending: list[tuple[int, tuple[float, ...], tuple[Entry, ...]]] = []
        for tag, value in tagged:
            if tag == 0:
                t_ids.append(value[0])
                t_coords.append(value[1])
                t_labels.append(value[2])
            else:
                pid, coords, entries, complete = value
                if complete:
                    yield pid, entries
                else:
                    pending.append((pid, coords, entries))
        if not pending:
            return
        if not t_ids:
            for pid, _, entries in pending:
                yield pid, entries
            return
        t_arr = np.asarray(t_coords, dtype=np.float64)
        id_arr = np.asarray(t_ids, dtype=np.int64)
        c_arr = np.asarray([coords for _, coords, _ in pending], dtype=np.float64)
        step = max(1, _BLOCK_ELEMS // len(t_ids))
        for lo in range(0, len(pending), step):
            dists = pairwise_distances(c_arr[lo : lo + step], t_arr)
            counter.add(dists.size)
            for (pid, _, carried), fresh in zip(
                pending[lo : lo + step], select_k_rows(dists, id_arr, t_labels, k)
            ):
                yield pid, merge_entries(carried, fresh, k)

    job = JobSpec(
        "update",
        _map_training(partition),
        reduce_unit,
        map_fn_b=map_candidate,
        partitions=threads,
    )
    return execute_dual_input(job, training, candidates)


def job4_unify(
    updated: Iterable[tuple[int, tuple[Entry, ...]]],
    k: int,
    *,
    threads: int = 1,
) -> list[tuple[int, tuple[Entry, ...]]]:
    """Merge the per-unit list instances of each point into its final
    list: k smallest over the union, deduplicated by neighbor id."""

    def map_instance(record, _side):
        yield record[0], record[1]

    def reduce_point(pid, instances, _side):
        if len(instances) == 1:
            yield pid, tuple(instances[0])
            return
        seen: set[int] = set()
        out: list[Entry] = []
        for entry in sorted(e for inst in instances for e in inst):
            if entry[1] in seen:
                continue
            seen.add(entry[1])
            out.append(entry)
            if len(out) == k:
                break
        yield pid, tuple(out)

    job = JobSpec("integrate", map_instance, reduce_point, partitions=threads)
    return execute(job, updated)


def job5_classify(
    final_lists: Iterable[tuple[int, tuple[Entry, ...]]],
    k: int,
    *,
    threads: int = 1,
) -> list[Classification]:
    """Label every point with the majority class of its final list."""

    def map_classify(record, _side):
        pid, entries = record
        if not entries:
            raise UnsatisfiableKError(f"point {pid}: empty neighbor list")
        yield pid, majority_label(entries)

    def reduce_pass(pid, labels, _side):
        yield Classification(pid, labels[0])

    job = JobSpec("classify", map_classify, reduce_pass, partitions=threads)
    return execute(job, final_lists)


def run_aknnc(
    input_points: Iterable[Point],
    training: Iterable[Point],
    config: PipelineConfig,
) -> RunResult:
    """Run the full staged pipeline and classify every input point."""
    training = list(training)
    k = config.k
    if len(training) < k:
        raise UnsatisfiableKError(
            f"training set has {len(training)} points, fewer than k={k}"
        )
    timings: list[tuple[str, float]] = []
    diagnostics: dict[int, tuple] | None = {} if config.collect_diagnostics else None

    started = time.perf_counter()
    stats = job1_distribution(training, config.grid, threads=config.threads)
    timings.append(("distribution", time.perf_counter() - started))

    merge_stats: MergeStats | None = None
    if config.method == "kdann":
        started = time.perf_counter()
        merged, merge_stats = merge_cells(stats, k, config.grid)
        partition = Partition.from_regions(config.grid, merged, stats)
        timings.append(("merge", time.perf_counter() - started))
    else:
        partition = Partition.from_cells(config.grid, stats)

    counter = _Counter()
    started = time.perf_counter()
    candidates = job2_primitive(
        input_points, training, partition, k, threads=config.threads, counter=counter
    )
    timings.append(("primitive", time.perf_counter() - started))

    started = time.perf_counter()
    updated = job3_update(
        candidates,
        training,
        partition,
        k,
        threads=config.threads,
        counter=counter,
        inject_fault=config.inject_fault,
        diagnostics=diagnostics,
    )
    timings.append(("update", time.perf_counter() - started))
    del candidates

    started = time.perf_counter()
    unified = job4_unify(updated, k, threads=config.threads)
    timings.append(("integrate", time.perf_counter() - started))
    del updated

    started = time.perf_counter()
    classifications = job5_classify(unified, k, threads=config.threads)
    timings.append(("classify", time.perf_counter() - started))

    return RunResult(
        classifications=classifications,
        knn_lists=dict(unified),
        timings=timings,
        merge_stats=merge_stats,
        distance_computations=counter.value,
        diagnostics=diagnostics,
    )
