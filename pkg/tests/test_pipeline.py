"""Stage-level examples and end-to-end pipeline invariants."""

import math
import pickle
import random

import pytest

from gridknn.errors import ConfigError, UnsatisfiableKError
from gridknn.data_io import DatasetSpec, generate
from gridknn.geometry import BoundaryShape, GridSpec, Point, cell_of
from gridknn.grid import compute_distribution, count_in_shape_lower_bound, merge_cells
from gridknn.oracle import oracle_aknnc
from gridknn.pipeline import (
    Classification,
    KnnList,
    Partition,
    PipelineConfig,
    job2_primitive,
    job3_update,
    job4_unify,
    job5_classify,
    majority_label,
    merge_entries,
    run_aknnc,
)


def base_partition(training, grid):
    return Partition.from_cells(grid, compute_distribution(training, grid))


class TestJob2Primitive:
    def test_selects_k_smallest_in_cell(self):
        grid = GridSpec(1, 1)
        training = [
            Point(10, (0.6,), "A"),
            Point(11, (0.7,), "B"),
            Point(12, (0.8,), "C"),
        ]
        cands = job2_primitive(
            [Point(1, (0.5,))], training, base_partition(training, grid), 2
        )
        assert len(cands) == 1
        entries = cands[0].entries
        assert [e[1] for e in entries] == [10, 11]
        assert entries[0][0] == pytest.approx(0.1)
        assert not cands[0].complete

    def test_lonely_point_gets_empty_list(self):
        grid = GridSpec(1, 4)
        training = [Point(10, (0.9,), "A")]
        cands = job2_primitive(
            [Point(1, (0.1,))], training, base_partition(training, grid), 3
        )
        assert cands[0].entries == ()

    def test_full_list_when_k_cohabitants_exist(self):
        grid = GridSpec(2, 2)
        training = [Point(i, (0.1 + 0.02 * i, 0.1), "A") for i in range(3)]
        cands = job2_primitive(
            [Point(50, (0.2, 0.2))], training, base_partition(training, grid), 3
        )
        assert len(cands[0].entries) == 3

    def test_tie_broken_by_id(self):
        grid = GridSpec(1, 1)
        training = [Point(9, (0.6,), "A"), Point(4, (0.4,), "B")]
        cands = job2_primitive(
            [Point(1, (0.5,))], training, base_partition(training, grid), 1
        )
        assert cands[0].entries[0][1] == 4


class TestJob3Update:
    def test_interior_ball_completes_without_copies(self):
        grid = GridSpec(1, 2)
        training = [Point(i, (0.5 + 0.01 * i,), "A") for i in range(1, 4)]
        partition = base_partition(training, grid)
        cands = job2_primitive([Point(0, (0.52,))], training, partition, 3)
        updated = job3_update(cands, training, partition, 3)
        assert len(updated) == 1
        assert updated[0][0] == 0
        assert len(updated[0][1]) == 3

    def test_growth_reaches_neighbor_cell(self):
        # Home cell empty; the single training point lives one cell over.
        grid = GridSpec(1, 4)
        training = [Point(2, (0.24,), "A")]
        partition = base_partition(training, grid)
        cands = job2_primitive([Point(1, (0.26,))], training, partition, 1)
        assert cands[0].entries == ()
        updated = job3_update(cands, training, partition, 1)
        final = dict(updated)[1]
        assert final[0][1] == 2
        assert final[0][0] == pytest.approx(0.02)

    def test_incomplete_copy_per_overlapped_occupied_cell(self):
        grid = GridSpec(2, 2)
        training = [
            Point(10, (0.45, 0.45), "A"),
            Point(11, (0.55, 0.45), "B"),
        ]
        partition = base_partition(training, grid)
        diagnostics = {}
        cands = job2_primitive([Point(1, (0.49, 0.2))], training, partition, 2)
        job3_update(cands, training, partition, 2, diagnostics=diagnostics)
        home, targets, radius, expanded = diagnostics[1]
        assert home == cell_of((0.49, 0.2), grid)
        assert targets  # the ball crosses into the other occupied cell
        assert radius >= math.dist((0.49, 0.2), (0.45, 0.45))


class TestJob4Unify:
    def test_single_instance_unchanged(self):
        instance = ((0.1, 7, "A"), (0.2, 8, "B"))
        assert job4_unify([(1, instance)], 2) == [(1, instance)]

    def test_dedupe_and_select(self):
        a = ((0.1, 100, "A"), (0.5, 101, "B"))
        b = ((0.1, 100, "A"), (0.3, 102, "C"))
        result = job4_unify([(1, a), (1, b)], 2)
        assert result == [(1, ((0.1, 100, "A"), (0.3, 102, "C")))]

    def test_merges_many_instances(self):
        instances = [
            (1, ((0.4, 1, "A"),)),
            (1, ((0.2, 2, "B"),)),
            (1, ((0.3, 3, "C"),)),
        ]
        result = job4_unify(instances, 2)
        assert result == [(1, ((0.2, 2, "B"), (0.3, 3, "C")))]


class TestJob5Classify:
    def test_strict_majority(self):
        entries = ((0.1, 1, "A"), (0.2, 2, "A"), (0.3, 3, "B"))
        assert majority_label(entries) == "A"
        out = job5_classify([(7, entries)], 3)
        assert out == [Classification(7, "A")]

    def test_tie_goes_to_nearest(self):
        entries = ((0.1, 1, "A"), (0.2, 2, "B"))
        assert majority_label(entries) == "A"

    def test_tie_at_equal_distance_goes_to_smallest_label(self):
        entries = ((0.1, 2, "B"), (0.1, 5, "A"))
        assert majority_label(entries) == "A"

    def test_k1_uses_single_neighbor(self):
        assert majority_label(((0.3, 9, "E"),)) == "E"

    def test_empty_list_is_an_error(self):
        with pytest.raises(UnsatisfiableKError, match="point 3"):
            job5_classify([(3, ())], 2)


class TestMergeEntries:
    def test_merges_sorted_runs(self):
        a = ((0.1, 1, "A"), (0.4, 2, "B"))
        b = ((0.2, 3, "C"), (0.5, 4, "D"))
        assert merge_entries(a, b, 3) == ((0.1, 1, "A"), (0.2, 3, "C"), (0.4, 2, "B"))

    def test_handles_empty_sides(self):
        a = ((0.1, 1, "A"),)
        assert merge_entries(a, (), 2) == a
        assert merge_entries((), a, 2) == a


class TestKnnListType:
    def test_wire_round_trip(self):
        wire = ((0.25, 4, "B"), (0.5, 2, "A"))
        knn = KnnList.from_wire(wire)
        assert knn.entries[0].neighbor_id == 4
        assert knn.entries[0].distance == 0.25
        assert knn.to_wire() == wire

    def test_rejects_unsorted_or_duplicate_entries(self):
        with pytest.raises(ValueError):
            KnnList.from_wire(((0.5, 2, "A"), (0.25, 4, "B")))
        with pytest.raises(ValueError):
            KnnList.from_wire(((0.25, 4, "B"), (0.25, 4, "B")))


class TestConfigValidation:
    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            PipelineConfig(method="fast", k=1, grid=GridSpec(2, 4))

    def test_merging_method_requires_power_of_two_grid(self):
        with pytest.raises(ConfigError):
            PipelineConfig(method="kdann", k=1, grid=GridSpec(2, 6))
        PipelineConfig(method="kdann+", k=1, grid=GridSpec(2, 6))

    def test_training_smaller_than_k(self):
        cfg = PipelineConfig(method="kdann+", k=5, grid=GridSpec(1, 4))
        with pytest.raises(UnsatisfiableKError):
            run_aknnc([], [Point(1, (0.5,), "A")], cfg)


def small_instance(seed, d=2, kind="uniform", count=400):
    spec = DatasetSpec(kind=kind, d=d, count=count, seed=seed, train_fraction=0.25)
    return generate(spec)


class TestRunEndToEnd:
    @pytest.mark.parametrize("method", ["kdann+", "kdann"])
    @pytest.mark.parametrize("kind", ["uniform", "power-law"])
    def test_matches_oracle(self, method, kind):
        inp, tr = small_instance(17, d=2, kind=kind)
        cfg = PipelineConfig(method=method, k=5, grid=GridSpec(2, 8), threads=2)
        result = run_aknnc(inp, tr, cfg)
        lists, classifications = oracle_aknnc(inp, tr, 5)
        assert result.knn_lists == lists
        assert result.classifications == classifications

    def test_methods_agree(self):
        inp, tr = small_instance(23, d=3, kind="power-law")
        grid = GridSpec(3, 4)
        res_a = run_aknnc(inp, tr, PipelineConfig(method="kdann+", k=4, grid=grid))
        res_b = run_aknnc(inp, tr, PipelineConfig(method="kdann", k=4, grid=grid))
        assert res_a.classifications == res_b.classifications
        assert res_a.knn_lists == res_b.knn_lists

    def test_k1_coincident_training_point_wins(self):
        tr = [Point(5, (0.3, 0.3), "E"), Point(6, (0.9, 0.9), "A")]
        inp = [Point(1, (0.3, 0.3))]
        cfg = PipelineConfig(method="kdann+", k=1, grid=GridSpec(2, 4))
        result = run_aknnc(inp, tr, cfg)
        assert result.classifications == [Classification(1, "E")]
        assert result.knn_lists[1][0][0] == 0.0

    def test_deterministic_across_threads_and_runs(self):
        inp, tr = small_instance(31, d=2, count=900)
        blobs = set()
        for threads in (1, 2, 8, 2):
            cfg = PipelineConfig(method="kdann+", k=7, grid=GridSpec(2, 16), threads=threads)
            result = run_aknnc(inp, tr, cfg)
            blobs.add(
                pickle.dumps((result.classifications, sorted(result.knn_lists.items())))
            )
        assert len(blobs) == 1

    def test_timings_cover_expected_phases(self):
        inp, tr = small_instance(37, count=200)
        plus = run_aknnc(inp, tr, PipelineConfig(method="kdann+", k=3, grid=GridSpec(2, 4)))
        assert [p for p, _ in plus.timings] == [
            "distribution", "primitive", "update", "integrate", "classify",
        ]
        assert plus.merge_stats is None
        base = run_aknnc(inp, tr, PipelineConfig(method="kdann", k=3, grid=GridSpec(2, 4)))
        assert [p for p, _ in base.timings] == [
            "distribution", "merge", "primitive", "update", "integrate", "classify",
        ]
        assert base.merge_stats is not None

    def test_fault_injection_breaks_exactness(self):
        # Dense cells: every home cell holds k points, so the fault yields
        # silently wrong lists instead of empty ones.
        inp, tr = small_instance(41, count=800)
        cfg = PipelineConfig(
            method="kdann+", k=3, grid=GridSpec(2, 4), inject_fault="skip-overlap"
        )
        result = run_aknnc(inp, tr, cfg)
        lists, _ = oracle_aknnc(inp, tr, 3)
        assert result.knn_lists != lists


class TestExpansionInvariants:
    """The final radius certifies coverage; emitted copies cover every
    training point that can enter the final list."""

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_radius_and_coverage(self, seed):
        rng = random.Random(seed)
        d = rng.choice([1, 2, 3])
        grid = GridSpec(d, 8)
        k = rng.choice([2, 4, 8])
        # Sparse training so that expansion genuinely happens.
        tr = [
            Point(i, tuple(rng.random() for _ in range(d)), "AB"[i % 2])
            for i in range(k + 10)
        ]
        inp = [
            Point(1000 + i, tuple(rng.random() for _ in range(d))) for i in range(150)
        ]
        cfg = PipelineConfig(
            method="kdann+", k=k, grid=grid, collect_diagnostics=True
        )
        result = run_aknnc(inp, tr, cfg)
        stats = compute_distribution(tr, grid)
        lists, _ = oracle_aknnc(inp, tr, k)
        expanded_seen = 0
        for p in inp:
            home, targets, radius, expanded = result.diagnostics[p.id]
            kth = lists[p.id][-1][0]
            assert kth <= radius + 1e-15
            if expanded:
                expanded_seen += 1
                shape = BoundaryShape(p.coords, radius)
                assert count_in_shape_lower_bound(shape, stats, grid) >= k
            reachable = {home} | set(targets)
            for t in tr:
                if math.dist(t.coords, p.coords) <= kth:
                    assert cell_of(t.coords, grid) in reachable
        assert expanded_seen > 0

    def test_emitted_targets_match_geometry_overlaps(self):
        from gridknn.geometry import overlapped_cells

        rng = random.Random(99)
        grid = GridSpec(2, 8)
        tr = [Point(i, (rng.random(), rng.random()), "A") for i in range(40)]
        inp = [Point(100 + i, (rng.random(), rng.random())) for i in range(60)]
        stats = compute_distribution(tr, grid)
        cfg = PipelineConfig(method="kdann+", k=3, grid=grid, collect_diagnostics=True)
        result = run_aknnc(inp, tr, cfg)
        for p in inp:
            home, targets, radius, _ = result.diagnostics[p.id]
            shape = BoundaryShape(p.coords, radius)
            occupied_overlaps = [
                c
                for c in overlapped_cells(shape, home, grid)
                if stats.counts.get(c, 0) > 0
            ]
            assert list(targets) == occupied_overlaps


class TestMergedPartition:
    def test_region_counts_match_recount(self):
        # Re-keying the distribution to merged regions equals recounting
        # every training point through its region directly.
        inp, tr = small_instance(53, d=2, kind="power-law", count=500)
        grid = GridSpec(2, 8)
        stats = compute_distribution(tr, grid)
        merged, _ = merge_cells(stats, 6, grid)
        partition = Partition.from_regions(grid, merged, stats)
        recount: dict = {}
        for t in tr:
            region = merged.region_of(cell_of(t.coords, grid))
            recount[region] = recount.get(region, 0) + 1
        assert partition.counts == recount

    def test_home_unit_is_region_of_cell(self):
        inp, tr = small_instance(59, d=2, count=300)
        grid = GridSpec(2, 4)
        stats = compute_distribution(tr, grid)
        merged, _ = merge_cells(stats, 30, grid)
        partition = Partition.from_regions(grid, merged, stats)
        for p in inp[:50]:
            assert partition.home_of(p.coords) == merged.region_of(cell_of(p.coords, grid))
