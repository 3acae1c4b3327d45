"""Command-line orchestration: generate, run, verify, bench, quality."""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

from .data_io import (
    DatasetSpec,
    class_label_for,
    generate,
    load_bounds,
    parse_classifications,
    parse_input,
    parse_training,
    sample_fraction,
    write_classifications,
    write_knn_lists,
    write_points,
)
from .errors import GridKnnError
from .geometry import GridSpec, Point
from .oracle import oracle_aknnc
from .pipeline import PHASES, PipelineConfig, RunResult, run_aknnc
from .quality import compute_quality

logger = logging.getLogger(__name__)

# Granularity exponents tuned at full scale, by (distribution, dimension);
# desk-scale runs shrink these so per-cell training density stays comparable.
_TUNED_N = {
    ("power-law", 1): 18,
    ("power-law", 2): 9,
    ("power-law", 3): 7,
    ("uniform", 1): 16,
    ("uniform", 2): 7,
    ("uniform", 3): 5,
}
_TARGET_DENSITY = {"power-law": 8.0, "uniform": 64.0}


def default_n(distribution: str, d: int, n_training: int) -> int:
    """Granularity exponent for a dataset: cells sized so the expected
    training points per cell match the tuned full-scale density, capped at
    the full-scale exponent."""
    cap = _TUNED_N.get((distribution, min(d, 3)), 5)
    density = _TARGET_DENSITY.get(distribution, 64.0)
    cells_wanted = max(1.0, n_training / density)
    n = max(1, round(math.log2(cells_wanted) / d))
    return min(n, cap)


def _add_generator_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--distribution", choices=["uniform", "power-law"],
                        default="uniform", help="synthetic data distribution")
    parser.add_argument("--count", type=int, default=10000,
                        help="total synthetic points (before the training split)")
    parser.add_argument("--alpha", type=float, default=4.0,
                        help="power-law shape (coordinates are u**alpha)")
    parser.add_argument("--classes", type=int, default=5, help="class count")
    parser.add_argument("--class-grid", type=int, default=5,
                        help="coarse per-axis resolution of the label rule")
    parser.add_argument("--train-fraction", type=float, default=0.1,
                        help="fraction of points labeled as training")


def _add_grid_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--n", type=int, help="granularity exponent (g = 2^n)")
    group.add_argument("--cells-per-axis", type=int, help="cells per axis g")


def _resolve_grid(args, d: int, distribution: str, n_training: int) -> tuple[GridSpec, int | None]:
    """GridSpec from --n / --cells-per-axis, or the density default.
    Returns (grid, n_exponent_or_None)."""
    if args.cells_per_axis is not None:
        g = args.cells_per_axis
        n = g.bit_length() - 1 if g >= 1 and (1 << (g.bit_length() - 1)) == g else None
        return GridSpec(d, g), n
    n = args.n if args.n is not None else default_n(distribution, d, n_training)
    return GridSpec(d, 2 ** n), n


def _dataset_spec(args, d: int, seed: int) -> DatasetSpec:
    return DatasetSpec(
        kind=args.distribution,
        d=d,
        count=args.count,
        seed=seed,
        alpha=args.alpha,
        classes=args.classes,
        class_grid=args.class_grid,
        train_fraction=args.train_fraction,
    )


def _load_datasets(args, seed: int) -> tuple[list[Point], list[Point], str]:
    """(input, training, distribution-name) from files or the generator."""
    if (args.train is None) != (args.input is None):
        raise GridKnnError("--train and --input must be given together")
    if args.train is not None:
        bounds = None
        if getattr(args, "bounds", None):
            bounds = load_bounds(args.bounds)
        else:
            guess = Path(str(args.train).replace(".train.tsv", ".bounds.tsv"))
            if guess != Path(args.train) and guess.exists():
                bounds = load_bounds(guess)
        training = list(parse_training(args.train, args.d, bounds))
        input_points = list(parse_input(args.input, args.d, bounds))
        return input_points, training, args.distribution
    spec = _dataset_spec(args, args.d, seed)
    input_points, training = generate(spec)
    return input_points, training, spec.kind


def _apply_fraction(
    input_points: list[Point], training: list[Point], fraction: float, seed: int
) -> tuple[list[Point], list[Point]]:
    if fraction >= 1.0:
        return input_points, training
    return (
        list(sample_fraction(input_points, fraction, seed ^ 0x5EED)),
        list(sample_fraction(training, fraction, seed ^ 0x7EED)),
    )


def _write_timings(path: Path, result: RunResult, method: str, k: int,
                   n: int | None, d: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("phase,method,k,n,d,elapsed_ms\n")
        for phase, seconds in result.timings:
            fh.write(f"{phase},{method},{k},{n if n is not None else ''},{d},"
                     f"{seconds * 1e3:.3f}\n")


def cmd_generate(args) -> int:
    spec = _dataset_spec(args, args.d, args.seed)
    input_points, training = generate(spec)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_points(f"{prefix}.train.tsv", training, with_label=True)
    write_points(f"{prefix}.input.tsv", input_points, with_label=False)
    with open(f"{prefix}.truth.tsv", "w", encoding="utf-8") as fh:
        fh.write("# point_id\tclass\n")
        for p in input_points:
            fh.write(f"{p.id}\t{class_label_for(p.coords, spec.class_grid, spec.classes)}\n")
    print(f"wrote {prefix}.train.tsv ({len(training)} points), "
          f"{prefix}.input.tsv ({len(input_points)} points), {prefix}.truth.tsv")
    return 0


def cmd_run(args) -> int:
    input_points, training, distribution = _load_datasets(args, args.seed)
    input_points, training = _apply_fraction(input_points, training, args.fraction, args.seed)
    grid, n = _resolve_grid(args, args.d, distribution, len(training))
    config = PipelineConfig(method=args.method, k=args.k, grid=grid, threads=args.threads)
    started = time.perf_counter()
    result = run_aknnc(input_points, training, config)
    total = time.perf_counter() - started

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_classifications(result.classifications, out / "classifications.tsv")
    if args.emit_knn:
        write_knn_lists(sorted(result.knn_lists.items()), out / "knn.tsv")
    _write_timings(out / "timings.csv", result, args.method, args.k, n, args.d)
    if result.merge_stats is not None:
        with open(out / "merge_stats.csv", "w", encoding="utf-8") as fh:
            fh.write(result.merge_stats.CSV_HEADER + "\n")
            fh.write(result.merge_stats.csv_row() + "\n")
    print(f"classified {len(result.classifications)} points "
          f"(method={args.method} k={args.k} g={grid.g} d={args.d} "
          f"threads={args.threads}) in {total:.2f}s; "
          f"{result.distance_computations} distance computations")
    return 0


def _verify_once(args, seed: int, d: int, k: int, method: str, distribution: str) -> tuple[bool, str]:
    spec_args = argparse.Namespace(**vars(args))
    spec_args.distribution = distribution
    spec_args.d = d
    input_points, training, _ = _load_datasets(spec_args, seed)
    if len(training) < k:
        return True, f"skipped (|T|={len(training)} < k={k})"
    grid, _ = _resolve_grid(args, d, distribution, len(training))
    config = PipelineConfig(
        method=method, k=k, grid=grid, threads=args.threads,
        inject_fault=args.inject_fault,
    )
    result = run_aknnc(input_points, training, config)
    lists, classifications = oracle_aknnc(input_points, training, k)
    truth = {c.point_id: c.label for c in classifications}
    mine = {c.point_id: c.label for c in result.classifications}
    for pid in sorted(lists):
        if result.knn_lists.get(pid) != lists[pid] or mine.get(pid) != truth[pid]:
            return False, f"first divergence at point {pid}"
    return True, f"OK n_points={len(lists)}"


def cmd_verify(args) -> int:
    methods = ["kdann+", "kdann"] if args.method == "both" else [args.method]
    if args.sweep:
        if args.train is not None or args.input is not None:
            raise GridKnnError("--sweep generates synthetic instances; "
                               "dataset files are not supported with it")
        failures = 0
        for d in (1, 2, 3, 4):
            for k in (1, 5, 10, 20):
                for distribution in ("uniform", "power-law"):
                    for method in methods:
                        ok, msg = _verify_once(args, args.seed + d * 31 + k, d, k,
                                               method, distribution)
                        tag = "OK" if ok else "DIVERGED"
                        print(f"{tag} d={d} k={k} {distribution} {method}: {msg}")
                        failures += 0 if ok else 1
        return 1 if failures else 0
    ok, msg = _verify_once(args, args.seed, args.d, args.k, methods[0],
                           args.distribution)
    print(msg)
    return 0 if ok else 1


def cmd_bench(args) -> int:
    header = (
        "method,distribution,d,n,g,k,fraction,threads,seed,n_input,n_training,"
        "distance_computations," + ",".join(f"{p}_ms" for p in PHASES) + ",total_ms"
    )
    rows = [header]
    for d in args.d_list:
        for distribution in args.distributions:
            spec = DatasetSpec(
                kind=distribution, d=d, count=args.count, seed=args.seed,
                alpha=args.alpha, classes=args.classes,
                class_grid=args.class_grid, train_fraction=args.train_fraction,
            )
            base_input, base_training = generate(spec)
            for fraction in args.fraction_list:
                input_points, training = _apply_fraction(
                    base_input, base_training, fraction, args.seed
                )
                for n in args.n_list:
                    grid = GridSpec(d, 2 ** n)
                    for k in args.k_list:
                        if len(training) < k:
                            continue
                        for method in args.methods:
                            for threads in args.threads_list:
                                config = PipelineConfig(
                                    method=method, k=k, grid=grid, threads=threads
                                )
                                started = time.perf_counter()
                                result = run_aknnc(input_points, training, config)
                                total_ms = (time.perf_counter() - started) * 1e3
                                by_phase = dict(result.timings)
                                phase_cols = ",".join(
                                    f"{by_phase.get(p, 0.0) * 1e3:.3f}" for p in PHASES
                                )
                                rows.append(
                                    f"{method},{distribution},{d},{n},{grid.g},{k},"
                                    f"{fraction},{threads},{args.seed},"
                                    f"{len(input_points)},{len(training)},"
                                    f"{result.distance_computations},"
                                    f"{phase_cols},{total_ms:.3f}"
                                )
                                print(rows[-1])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {out} ({len(rows) - 1} runs)")
    return 0


def cmd_quality(args) -> int:
    predictions = parse_classifications(args.pred)
    truth = parse_classifications(args.truth)
    report = compute_quality(predictions, truth)
    rows = report.csv_rows()
    for row in rows:
        print(row)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridknn",
        description="Exact all-k-nearest-neighbor classification over a grid "
                    "decomposition, with a radius-growth method (kdann+) and a "
                    "cell-merging baseline (kdann).",
    )
    parser.add_argument("--verbose", action="store_true", help="enable job trace logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write synthetic dataset files")
    p_gen.add_argument("--d", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=42)
    p_gen.add_argument("--out", required=True, help="output path prefix")
    _add_generator_flags(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_run = sub.add_parser("run", help="classify a dataset")
    p_run.add_argument("--method", choices=["kdann", "kdann+"], default="kdann+")
    p_run.add_argument("--k", type=int, required=True)
    p_run.add_argument("--d", type=int, required=True)
    _add_grid_flags(p_run)
    p_run.add_argument("--train", help="training TSV (with --input)")
    p_run.add_argument("--input", help="input TSV (with --train)")
    p_run.add_argument("--bounds", help="per-axis min/max sidecar for raw data")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=42)
    p_run.add_argument("--fraction", type=float, default=1.0,
                       help="seeded sample fraction of both datasets")
    p_run.add_argument("--emit-knn", action="store_true",
                       help="also write the final k-NN lists")
    _add_generator_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="differential check against the brute-force oracle")
    p_ver.add_argument("--method", choices=["kdann", "kdann+", "both"], default="both")
    p_ver.add_argument("--k", type=int, default=5)
    p_ver.add_argument("--d", type=int, default=2)
    _add_grid_flags(p_ver)
    p_ver.add_argument("--train", help="training TSV (with --input)")
    p_ver.add_argument("--input", help="input TSV (with --train)")
    p_ver.add_argument("--bounds")
    p_ver.add_argument("--threads", type=int, default=1)
    p_ver.add_argument("--seed", type=int, default=42)
    p_ver.add_argument("--sweep", action="store_true",
                       help="run the d x k x method x distribution matrix")
    p_ver.add_argument("--inject-fault", choices=["skip-overlap"],
                       help="test hook: drop overlap emission to force divergence")
    _add_generator_flags(p_ver)
    p_ver.set_defaults(func=cmd_verify)

    p_bench = sub.add_parser("bench", help="sweep configurations, one CSV row per run")
    p_bench.add_argument("--methods", type=lambda s: s.split(","), default=["kdann+"])
    p_bench.add_argument("--k-list", dest="k_list", type=_int_list, default=[5])
    p_bench.add_argument("--n-list", dest="n_list", type=_int_list, default=[4])
    p_bench.add_argument("--d-list", dest="d_list", type=_int_list, default=[2])
    p_bench.add_argument("--distributions", type=lambda s: s.split(","), default=["uniform"])
    p_bench.add_argument("--fraction-list", dest="fraction_list", type=_float_list,
                         default=[1.0])
    p_bench.add_argument("--threads-list", dest="threads_list", type=_int_list, default=[1])
    p_bench.add_argument("--count", type=int, default=20000)
    p_bench.add_argument("--seed", type=int, default=42)
    p_bench.add_argument("--alpha", type=float, default=4.0)
    p_bench.add_argument("--classes", type=int, default=5)
    p_bench.add_argument("--class-grid", type=int, default=5)
    p_bench.add_argument("--train-fraction", type=float, default=0.1)
    p_bench.add_argument("--out", required=True, help="output CSV path")
    p_bench.set_defaults(func=cmd_bench)

    p_q = sub.add_parser("quality", help="one-vs-rest rates of predictions vs ground truth")
    p_q.add_argument("--pred", required=True, help="classifications TSV")
    p_q.add_argument("--truth", required=True, help="ground-truth TSV")
    p_q.add_argument("--out", help="also write the report CSV here")
    p_q.set_defaults(func=cmd_quality)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.DEBUG, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except GridKnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
