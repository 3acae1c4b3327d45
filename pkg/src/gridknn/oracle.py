"""Brute-force reference: quadratic scan of the whole training set.

Shares the tie and majority rules with the pipeline so that outputs are
comparable entry for entry; the neighbor search itself is an independent
full scan with no grid, no merging, and no radius logic.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import ConfigError, UnsatisfiableKError
from .geometry import Point, pairwise_distances
from .pipeline import Classification, Entry, majority_label, select_k_rows

_BLOCK_ELEMS = 4_000_000


def oracle_aknnc(
    input_points: Iterable[Point],
    training: Iterable[Point],
    k: int,
    *,
    guard: int = 10 ** 8,
) -> tuple[dict[int, tuple[Entry, ...]], list[Classification]]:
    """Exact k-NN lists and classifications by scanning all of the
    training set for every input point.

    Refuses instances where |input| * |training| exceeds the guard.
    """
    inputs = list(input_points)
    train = list(training)
    if len(inputs) * len(train) > guard:
        raise ConfigError(
            f"oracle guard exceeded: {len(inputs)} x {len(train)} pairs > {guard}"
        )
    if len(train) < k:
        raise UnsatisfiableKError(
            f"training set has {len(train)} points, fewer than k={k}"
        )
    inputs.sort(key=lambda p: p.id)

    t_arr = np.asarray([p.coords for p in train], dtype=np.float64)
    t_ids = np.asarray([p.id for p in train], dtype=np.int64)
    t_labels = [p.label for p in train]
    i_arr = np.asarray([p.coords for p in inputs], dtype=np.float64)

    lists: dict[int, tuple[Entry, ...]] = {}
    classifications: list[Classification] = []
    step = max(1, _BLOCK_ELEMS // max(1, len(train)))
    for lo in range(0, len(inputs), step):
        dists = pairwise_distances(i_arr[lo : lo + step], t_arr)
        for point, entries in zip(
            inputs[lo : lo + step], select_k_rows(dists, t_ids, t_labels, k)
        ):
            lists[point.id] = entries
            classifications.append(Classification(point.id, majority_label(entries)))
    return lists, classifications
