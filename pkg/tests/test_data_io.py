"""File formats, normalization, and the synthetic generators."""

import numpy as np
import pytest

from gridknn.errors import ConfigError, ParseError
from gridknn.data_io import (
    DatasetSpec,
    class_label_for,
    generate,
    label_name,
    load_bounds,
    parse_classifications,
    parse_input,
    parse_knn_lists,
    parse_training,
    sample_fraction,
    write_bounds,
    write_classifications,
    write_knn_lists,
    write_points,
)
from gridknn.geometry import Point
from gridknn.pipeline import Classification


class TestParsing:
    def test_training_line(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("7\t0.25\t0.5\tA\n")
        points = list(parse_training(path, 2))
        assert points == [Point(7, (0.25, 0.5), "A")]

    def test_wrong_coordinate_count(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("7\t0.25\t0.5\t0.75\tA\n")
        with pytest.raises(ParseError, match=":1"):
            list(parse_training(path, 2))

    def test_empty_file(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("")
        assert list(parse_training(path, 2)) == []
        assert list(parse_input(path, 3)) == []

    def test_nan_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("1\t0.5\tA\n2\tnan\tB\n")
        with pytest.raises(ParseError, match=":2"):
            list(parse_training(path, 1))

    def test_out_of_range_without_bounds(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("1\t2.5\n")
        with pytest.raises(ParseError, match="bounds"):
            list(parse_input(path, 1))

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("1\t0.5\n1\t0.6\n")
        with pytest.raises(ParseError, match="duplicate"):
            list(parse_input(path, 1))

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("# header\n\n1\t0.5\n")
        assert len(list(parse_input(path, 1))) == 1


class TestBoundsNormalization:
    def test_raw_data_normalized(self, tmp_path):
        data = tmp_path / "raw.input.tsv"
        data.write_text("1\t-5.0\t100.0\n2\t5.0\t300.0\n")
        bounds_path = tmp_path / "raw.bounds.tsv"
        write_bounds(bounds_path, [(-5.0, 5.0), (100.0, 300.0)])
        points = list(parse_input(data, 2, load_bounds(bounds_path)))
        assert points[0].coords == (0.0, 0.0)
        assert points[1].coords == (1.0, 1.0)

    def test_value_outside_declared_bounds(self, tmp_path):
        data = tmp_path / "raw.tsv"
        data.write_text("1\t9.0\n")
        with pytest.raises(ParseError, match=":1"):
            list(parse_input(data, 1, [(0.0, 5.0)]))

    def test_degenerate_axis_maps_to_zero(self, tmp_path):
        data = tmp_path / "raw.tsv"
        data.write_text("1\t4.0\n")
        assert list(parse_input(data, 1, [(4.0, 4.0)]))[0].coords == (0.0,)


class TestPointRoundTrip:
    def test_training_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        points = [
            Point(i, tuple(rng.random(3)), label_name(i % 4)) for i in range(50)
        ]
        path = tmp_path / "x.train.tsv"
        write_points(path, points, with_label=True)
        assert list(parse_training(path, 3)) == points

    def test_input_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        points = [Point(i, tuple(rng.random(2))) for i in range(50)]
        path = tmp_path / "x.input.tsv"
        write_points(path, points, with_label=False)
        assert list(parse_input(path, 2)) == points


class TestGenerate:
    def test_seed_determinism_byte_identical(self, tmp_path):
        spec = DatasetSpec(kind="power-law", d=2, count=300, seed=11)
        files = []
        for tag in ("a", "b"):
            inp, tr = generate(spec)
            p = tmp_path / f"{tag}.tsv"
            write_points(p, inp, with_label=False)
            files.append(p.read_bytes())
        assert files[0] == files[1]

    def test_alpha_one_degenerates_to_uniform(self):
        uni = DatasetSpec(kind="uniform", d=2, count=200, seed=5)
        pl = DatasetSpec(kind="power-law", d=2, count=200, seed=5, alpha=1.0)
        assert generate(uni) == generate(pl)

    def test_coordinates_strictly_below_one(self):
        inp, tr = generate(DatasetSpec(kind="power-law", d=3, count=500, seed=6))
        assert all(0.0 <= x < 1.0 for p in inp + tr for x in p.coords)

    def test_split_sizes_and_disjoint_ids(self):
        inp, tr = generate(DatasetSpec(kind="uniform", d=1, count=1000, seed=7))
        assert len(tr) == 100
        assert len(inp) == 900
        assert {p.id for p in inp}.isdisjoint({p.id for p in tr})

    def test_power_law_is_skewed_toward_origin(self):
        inp, _ = generate(
            DatasetSpec(kind="power-law", d=1, count=2000, seed=8, alpha=4.0)
        )
        below = sum(1 for p in inp if p.coords[0] < 0.1)
        assert below > len(inp) * 0.4  # P(u^4 < 0.1) = 0.1^0.25 ~ 0.56

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            DatasetSpec(kind="gaussian", d=2, count=10, seed=1)
        with pytest.raises(ConfigError):
            DatasetSpec(kind="uniform", d=1, count=10, seed=1, classes=9, class_grid=5)
        with pytest.raises(ConfigError):
            DatasetSpec(kind="uniform", d=1, count=10, seed=1, alpha=0.0)


class TestLabelRule:
    def test_hand_computed_example(self):
        # 0.42 on a 5-wide coarse axis falls in cell 2; 2 mod 5 -> class C.
        assert class_label_for((0.42,), 5, 5) == "C"

    def test_pure_function_of_coordinates(self):
        a = class_label_for((0.3, 0.7), 4, 3)
        b = class_label_for((0.3, 0.7), 4, 3)
        assert a == b

    def test_training_labels_follow_rule(self):
        spec = DatasetSpec(kind="uniform", d=2, count=400, seed=9, classes=5, class_grid=5)
        _, training = generate(spec)
        for p in training:
            assert p.label == class_label_for(p.coords, 5, 5)

    def test_label_names(self):
        assert label_name(0) == "A"
        assert label_name(25) == "Z"
        assert label_name(26) == "C26"


class TestResultWriters:
    def test_classification_line(self, tmp_path):
        path = tmp_path / "c.tsv"
        write_classifications([Classification(7, "A")], path)
        assert path.read_text().splitlines()[1] == "7\tA"

    def test_empty_stream_writes_header_comment(self, tmp_path):
        path = tmp_path / "c.tsv"
        write_classifications([], path)
        content = path.read_text()
        assert content.startswith("#")
        assert parse_classifications(path) == {}

    def test_classifications_round_trip(self, tmp_path):
        path = tmp_path / "c.tsv"
        write_classifications([Classification(3, "B"), Classification(9, "A")], path)
        assert parse_classifications(path) == {3: "B", 9: "A"}

    def test_knn_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        lists = []
        for pid in range(30):
            entries = tuple(
                sorted((float(rng.random()), int(rng.integers(1000)), label_name(int(rng.integers(4)))) for _ in range(4))
            )
            lists.append((pid, entries))
        path = tmp_path / "knn.tsv"
        write_knn_lists(lists, path)
        parsed = parse_knn_lists(path)
        for pid, entries in lists:
            got = parsed[pid]
            assert [e[1] for e in got] == [e[1] for e in entries]
            assert [e[2] for e in got] == [e[2] for e in entries]
            for g, e in zip(got, entries):
                assert g[0] == pytest.approx(e[0], abs=1e-9)


class TestSampleFraction:
    def test_deterministic(self):
        pts = [Point(i, (i / 100.0,)) for i in range(100)]
        a = list(sample_fraction(pts, 0.3, 5))
        b = list(sample_fraction(pts, 0.3, 5))
        assert a == b
        assert 10 < len(a) < 60

    def test_full_fraction_passthrough(self):
        pts = [Point(i, (0.5,)) for i in range(10)]
        assert list(sample_fraction(pts, 1.0, 1)) == pts

    def test_invalid_fraction(self):
        with pytest.raises(ConfigError):
            list(sample_fraction([], 0.0, 1))
