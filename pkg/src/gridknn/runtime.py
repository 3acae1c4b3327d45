"""Embedded deterministic map/shuffle/reduce batch engine.

A job maps an input record stream to keyed records, shuffles them with a
sort (by key, then by serialized payload bytes), and reduces each key
group with a bounded thread pool. Parallel execution is observationally
identical to the sequential definition: output is a pure function of the
job and its input, independent of the worker count and of scheduling.

Payloads are pickled at map emission time; the payload byte order defines
the within-group value order, which makes every downstream consumer see a
stable, reproducible sequence.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import pickle
import tempfile
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, NamedTuple

from .errors import JobError

logger = logging.getLogger(__name__)

_PICKLE_PROTOCOL = 5
_MAP_CHUNK = 8192
_REDUCE_BATCH = 512

MapFn = Callable[[Any, Mapping[str, Any]], Iterable[tuple[Any, Any]]]
ReduceFn = Callable[[Any, list, Mapping[str, Any]], Iterable[Any]]


class KeyedRecord(NamedTuple):
    """One shuffled record: a totally ordered key plus the serialized
    payload bytes that round-trip losslessly through pickle."""

    key: Any
    payload: bytes


@dataclass(frozen=True)
class JobSpec:
    """One map/shuffle/reduce job.

    map_fn and reduce_fn must be pure with respect to side_inputs and
    reentrant; map_fn_b is only consulted by execute_dual_input.
    """

    name: str
    map_fn: MapFn
    reduce_fn: ReduceFn
    map_fn_b: MapFn | None = None
    side_inputs: Mapping[str, Any] = field(default_factory=dict)
    partitions: int = 1
    spill_records: int | None = None


def execute(job: JobSpec, records: Iterable[Any]) -> list:
    """Run a single-input job and return the reduce outputs concatenated
    in ascending key order."""
    shuffled = _map_phase(job, [(job.map_fn, records, None)])
    return _reduce_phase(job, shuffled)


def execute_dual_input(job: JobSpec, input_a: Iterable[Any], input_b: Iterable[Any]) -> list:
    """Run a two-input job: map_fn over input_a and map_fn_b over input_b,
    co-shuffled. Reduce receives (tag, value) pairs with tag 0 for values
    from input_a and 1 for input_b."""
    if job.map_fn_b is None:
        raise JobError(f"job {job.name}: dual-input execution requires map_fn_b")
    shuffled = _map_phase(job, [(job.map_fn, input_a, 0), (job.map_fn_b, input_b, 1)])
    return _reduce_phase(job, shuffled)


def _map_chunk(
    job: JobSpec,
    map_fn: MapFn,
    chunk: list,
    start: int,
    tag: int | None,
) -> list[KeyedRecord]:
    side = job.side_inputs
    out: list[KeyedRecord] = []
    dumps = pickle.dumps
    for offset, record in enumerate(chunk):
        try:
            pairs = map_fn(record, side)
        except JobError:
            raise
        except Exception as exc:
            raise JobError(
                f"job {job.name}: map failed on record {start + offset}: {exc}"
            ) from exc
        for key, value in pairs:
            payload = value if tag is None else (tag, value)
            try:
                blob = dumps(payload, protocol=_PICKLE_PROTOCOL)
            except Exception as exc:
                raise JobError(
                    f"job {job.name}: cannot serialize map output of record "
                    f"{start + offset}: {exc}"
                ) from exc
            out.append(KeyedRecord(key, blob))
    return out


def _chunks(records: Iterable[Any], size: int) -> Iterator[tuple[int, list]]:
    it = iter(records)
    start = 0
    while True:
        chunk = list(itertools.islice(it, size))
        if not chunk:
            return
        yield start, chunk
        start += len(chunk)


class _SpillBuffer:
    """Accumulates keyed records, spilling sorted runs to temp files once
    the configured record count is exceeded."""

    def __init__(self, threshold: int | None):
        self.threshold = threshold
        self.records: list[KeyedRecord] = []
        self.runs: list[Any] = []

    def add(self, batch: list[KeyedRecord]) -> None:
        self.records.extend(batch)
        if self.threshold is not None and len(self.records) > self.threshold:
            self._spill()

    def _spill(self) -> None:
        self.records.sort()
        run = tempfile.TemporaryFile()
        pickle.dump(self.records, run, protocol=_PICKLE_PROTOCOL)
        run.seek(0)
        self.runs.append(run)
        self.records = []

    def sorted_stream(self) -> Iterator[KeyedRecord]:
        self.records.sort()
        if not self.runs:
            return iter(self.records)
        streams = [self._read_run(run) for run in self.runs]
        streams.append(iter(self.records))
        return heapq.merge(*streams)

    @staticmethod
    def _read_run(run) -> Iterator[KeyedRecord]:
        records = pickle.load(run)
        run.close()
        return iter(records)


def _map_phase(
    job: JobSpec,
    inputs: list[tuple[MapFn, Iterable[Any], int | None]],
) -> Iterator[KeyedRecord]:
    started = time.perf_counter()
    buffer = _SpillBuffer(job.spill_records)
    n_in = 0
    n_pairs = 0
    if job.partitions <= 1:
        for map_fn, records, tag in inputs:
            for start, chunk in _chunks(records, _MAP_CHUNK):
                batch = _map_chunk(job, map_fn, chunk, start, tag)
                n_in += len(chunk)
                n_pairs += len(batch)
                buffer.add(batch)
    else:
        with ThreadPoolExecutor(max_workers=job.partitions) as pool:
            pending: deque = deque()
            for map_fn, records, tag in inputs:
                for start, chunk in _chunks(records, _MAP_CHUNK):
                    n_in += len(chunk)
                    pending.append(pool.submit(_map_chunk, job, map_fn, chunk, start, tag))
                    while len(pending) >= job.partitions * 2:
                        batch = pending.popleft().result()
                        n_pairs += len(batch)
                        buffer.add(batch)
            while pending:
                batch = pending.popleft().result()
                n_pairs += len(batch)
                buffer.add(batch)
    elapsed = (time.perf_counter() - started) * 1e3
    logger.debug(
        "job %s: map %d records -> %d pairs (%d spilled runs) in %.1f ms",
        job.name, n_in, n_pairs, len(buffer.runs), elapsed,
    )
    return buffer.sorted_stream()


def _group_stream(shuffled: Iterator[KeyedRecord]) -> Iterator[tuple[Any, list[bytes]]]:
    for key, group in itertools.groupby(shuffled, key=lambda kr: kr.key):
        yield key, [kr.payload for kr in group]


def _reduce_batch(job: JobSpec, groups: list[tuple[Any, list[bytes]]]) -> list:
    side = job.side_inputs
    loads = pickle.loads
    out: list = []
    for key, payloads in groups:
        values = [loads(b) for b in payloads]
        try:
            out.extend(job.reduce_fn(key, values, side))
        except JobError:
            raise
        except Exception as exc:
            raise JobError(f"job {job.name}: reduce failed for key {key!r}: {exc}") from exc
    return out


def _reduce_phase(job: JobSpec, shuffled: Iterator[KeyedRecord]) -> list:
    started = time.perf_counter()
    out: list = []
    n_groups = 0
    groups = _group_stream(shuffled)
    if job.partitions <= 1:
        for key, payloads in groups:
            n_groups += 1
            out.extend(_reduce_batch(job, [(key, payloads)]))
    else:
        # Batches are submitted and collected in order, so the concatenated
        # output matches the sequential key-order definition exactly.
        with ThreadPoolExecutor(max_workers=job.partitions) as pool:
            pending: deque = deque()
            while True:
                batch = list(itertools.islice(groups, _REDUCE_BATCH))
                if not batch:
                    break
                n_groups += len(batch)
                pending.append(pool.submit(_reduce_batch, job, batch))
                while len(pending) >= job.partitions * 2:
                    out.extend(pending.popleft().result())
            while pending:
                out.extend(pending.popleft().result())
    elapsed = (time.perf_counter() - started) * 1e3
    logger.debug(
        "job %s: reduce %d groups -> %d records in %.1f ms",
        job.name, n_groups, len(out), elapsed,
    )
    return out
