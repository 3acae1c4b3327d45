"""Dataset files, normalization, and seeded synthetic generators.

All files are plain TSV. Training records are ``id <TAB> x0 .. xd-1 <TAB>
class``; input records drop the class column. A ``*.bounds.tsv`` sidecar
(per-axis min/max) lets raw un-normalized data be mapped into the unit
target space on parse. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ParseError
from .geometry import Point
from .pipeline import Classification, Entry

Bounds = list[tuple[float, float]]


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic dataset recipe.

    ``power-law`` draws each coordinate as u**alpha for u uniform on
    [0, 1), which piles mass toward the origin for alpha > 1 (alpha = 1
    degenerates to uniform). Class labels are a pure function of the
    coordinates: the linear index of the point's cell on a coarse
    class_grid decomposition, modulo the class count, so ground-truth
    regions are spatially coherent.
    """

    kind: str
    d: int
    count: int
    seed: int
    alpha: float = 4.0
    classes: int = 5
    class_grid: int = 5
    train_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "power-law"):
            raise ConfigError(f"unknown distribution {self.kind!r}")
        if self.d < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.d}")
        if self.count < 0:
            raise ConfigError(f"count must be >= 0, got {self.count}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 1 <= self.classes <= self.class_grid ** self.d:
            raise ConfigError(
                f"need 1 <= classes <= class_grid^d = {self.class_grid ** self.d}, "
                f"got {self.classes}"
            )
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )


def label_name(index: int) -> str:
    """Class label for a class index: A, B, C, ... then C26, C27, ..."""
    if index < 26:
        return string.ascii_uppercase[index]
    return f"C{index}"


def class_label_for(
    coords: Sequence[float], class_grid: int, classes: int
) -> str:
    """Deterministic class of a coordinate vector: linear coarse-grid cell
    (axis 0 least significant) modulo the class count."""
    linear = 0
    stride = 1
    for x in coords:
        c = int(x * class_grid)
        if c >= class_grid:
            c = class_grid - 1
        linear += c * stride
        stride *= class_grid
    return label_name(linear % classes)


def generate(spec: DatasetSpec) -> tuple[list[Point], list[Point]]:
    """Materialize (input, training) point lists for a dataset recipe.

    Training points are a seeded sample of round(count * train_fraction)
    points carrying class labels; the input set is the complement. Both
    are returned in ascending id order and identical across runs for a
    fixed seed.
    """
    rng = np.random.default_rng(spec.seed)
    coords = rng.random((spec.count, spec.d))
    if spec.kind == "power-law":
        coords = coords ** spec.alpha

    cell_idx = (coords * spec.class_grid).astype(np.int64)
    np.clip(cell_idx, 0, spec.class_grid - 1, out=cell_idx)
    strides = np.array([spec.class_grid ** i for i in range(spec.d)], dtype=np.int64)
    class_idx = (cell_idx @ strides) % spec.classes

    n_train = round(spec.count * spec.train_fraction)
    train_ids = np.sort(rng.permutation(spec.count)[:n_train])
    is_train = np.zeros(spec.count, dtype=bool)
    is_train[train_ids] = True

    training = [
        Point(int(i), tuple(coords[i]), label_name(int(class_idx[i])))
        for i in train_ids
    ]
    input_points = [
        Point(int(i), tuple(coords[i]))
        for i in range(spec.count)
        if not is_train[i]
    ]
    return input_points, training


def sample_fraction(points: Iterable[Point], fraction: float, seed: int) -> Iterator[Point]:
    """Seeded Bernoulli sample keeping roughly a fraction of a stream."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        yield from points
        return
    rng = np.random.default_rng(seed)
    for point in points:
        if rng.random() < fraction:
            yield point


def load_bounds(path: str | Path) -> Bounds:
    """Read a per-axis min/max sidecar: ``axis <TAB> min <TAB> max``."""
    bounds: dict[int, tuple[float, float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected axis<TAB>min<TAB>max")
            try:
                bounds[int(parts[0])] = (float(parts[1]), float(parts[2]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return [bounds[i] for i in sorted(bounds)]


def write_bounds(path: str | Path, bounds: Bounds) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# axis\tmin\tmax\n")
        for axis, (lo, hi) in enumerate(bounds):
            fh.write(f"{axis}\t{lo:.17g}\t{hi:.17g}\n")


def _parse_points(
    path: str | Path,
    d: int,
    *,
    with_label: bool,
    bounds: Bounds | None,
) -> Iterator[Point]:
    if bounds is not None and len(bounds) != d:
        raise ConfigError(f"bounds cover {len(bounds)} axes, expected {d}")
    n_fields = 1 + d + (1 if with_label else 0)
    seen: set[int] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != n_fields:
                raise ParseError(
                    f"{path}:{lineno}: expected {n_fields} fields "
                    f"(id, {d} coordinates{', class' if with_label else ''}), "
                    f"got {len(parts)}"
                )
            try:
                pid = int(parts[0])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad point id {parts[0]!r}") from exc
            if pid in seen:
                raise ParseError(f"{path}:{lineno}: duplicate point id {pid}")
            seen.add(pid)
            coords = []
            for axis in range(d):
                try:
                    value = float(parts[1 + axis])
                except ValueError as exc:
                    raise ParseError(
                        f"{path}:{lineno}: bad coordinate {parts[1 + axis]!r}"
                    ) from exc
                if not math.isfinite(value):
                    raise ParseError(f"{path}:{lineno}: non-finite coordinate {value}")
                if bounds is not None:
                    lo, hi = bounds[axis]
                    value = (value - lo) / (hi - lo) if hi > lo else 0.0
                if not 0.0 <= value <= 1.0:
                    raise ParseError(
                        f"{path}:{lineno}: coordinate {value} outside [0, 1] "
                        f"(supply a bounds sidecar for raw data)"
                    )
                coords.append(value)
            label = parts[-1] if with_label else None
            if with_label and not label:
                raise ParseError(f"{path}:{lineno}: empty class label")
            yield Point(pid, tuple(coords), label)


def parse_training(path: str | Path, d: int, bounds: Bounds | None = None) -> Iterator[Point]:
    """Stream labeled training points from a TSV file."""
    return _parse_points(path, d, with_label=True, bounds=bounds)


def parse_input(path: str | Path, d: int, bounds: Bounds | None = None) -> Iterator[Point]:
    """Stream unlabeled input points from a TSV file."""
    return _parse_points(path, d, with_label=False, bounds=bounds)


def write_points(path: str | Path, points: Iterable[Point], *, with_label: bool) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if with_label:
            fh.write("# point_id\tcoordinates...\tclass\n")
        else:
            fh.write("# point_id\tcoordinates...\n")
        for p in points:
            coords = "\t".join(f"{x:.17g}" for x in p.coords)
            if with_label:
                fh.write(f"{p.id}\t{coords}\t{p.label}\n")
            else:
                fh.write(f"{p.id}\t{coords}\n")


def write_classifications(results: Iterable[Classification], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# point_id\tclass\n")
        for res in results:
            fh.write(f"{res.point_id}\t{res.label}\n")


def parse_classifications(path: str | Path) -> dict[int, str]:
    out: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected point_id<TAB>class")
            try:
                out[int(parts[0])] = parts[1]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_knn_lists(
    lists: Iterable[tuple[int, tuple[Entry, ...]]], path: str | Path
) -> None:
    """Write final neighbor lists as ``point_id <TAB>
    id1,dist1,class1:id2,dist2,class2:...`` with 9-significant-digit
    distances."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# point_id\tneighbor_id,distance,class:...\n")
        for pid, entries in lists:
            body = ":".join(f"{nid},{dist:.9g},{label}" for dist, nid, label in entries)
            fh.write(f"{pid}\t{body}\n")


def parse_knn_lists(path: str | Path) -> dict[int, tuple[Entry, ...]]:
    out: dict[int, tuple[Entry, ...]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected point_id<TAB>list")
            try:
                pid = int(parts[0])
                entries = []
                if parts[1]:
                    for item in parts[1].split(":"):
                        nid, dist, label = item.split(",")
                        entries.append((float(dist), int(nid), label))
                out[pid] = tuple(entries)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return out
