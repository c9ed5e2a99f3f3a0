"""Efficiency measurements: per-path op counts and group-scaling wall times.

Counting convention: one basic operation is one scalar multiply or one scalar
add, reported separately.  ``mult_count``/``add_count`` cover the CG
contraction stage (pair products against nonzero coefficients), which scales
as ``T^2 / G``; the weight-mixing stage is reported as ``mix_mult_count``.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass

import numpy as np
import torch

from .autodiff import configure_threads
from .cg_ops import OpCounter, count_basic_ops, group_cg
from .irreps import LAYOUT_DIM, PathMode, build_cg_table, enumerate_paths

__all__ = [
    "BenchRow",
    "BenchReport",
    "PathRow",
    "QUOTED_TABLE",
    "QUOTED_TEXT",
    "bench_group_scaling",
    "bench_path_table",
    "path_table_csv",
    "time_callable",
]

# basic-operation table for single-channel transforms, keyed (lo, l1, l2)
QUOTED_TABLE = {
    (0, 0, 0): 1, (0, 1, 1): 3, (0, 2, 2): 5,
    (1, 0, 1): 3, (1, 1, 0): 3, (1, 1, 1): 6, (1, 1, 2): 9, (1, 2, 1): 9, (1, 2, 2): 12,
    (2, 0, 2): 5, (2, 1, 1): 9, (2, 1, 2): 12, (2, 2, 0): 5, (2, 2, 1): 12, (2, 2, 2): 19,
}
# the worked example quotes 13 basic operations for 1 (x) 1 -> 2
QUOTED_TEXT = {(2, 1, 1): 13}

GROUP_HEADER = ["mode", "T", "G", "path_count", "mult_count", "add_count", "median_ns", "iqr_ns"]
PATH_HEADER = ["l1", "l2", "lo", "mult_count", "add_count", "quoted_table", "quoted_text"]


@dataclass
class BenchRow:
    mode: str
    T: int
    G: int
    path_count: int
    mult_count: int
    add_count: int
    median_ns: float
    iqr_ns: float
    mix_mult_count: int = 0
    reps: int = 0
    inner: int = 1


@dataclass
class BenchReport:
    rows: list[BenchRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GROUP_HEADER)
        for r in self.rows:
            w.writerow([getattr(r, k) for k in GROUP_HEADER])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    def medians(self) -> list[float]:
        return [r.median_ns for r in self.rows]


@dataclass
class PathRow:
    l1: int
    l2: int
    lo: int
    mult_count: int
    add_count: int
    quoted_table: int | None
    quoted_text: int | None


def time_callable(fn, reps: int = 30, warmup: int = 5, min_sample_ns: float | None = None):
    """Median and IQR of ``fn()`` in ns.

    When a single call is too short for the clock, each sample times an
    inner loop of calls (doubling until long enough) and divides.
    """
    if reps < 30 or warmup < 5:
        raise ValueError("need at least 30 repetitions after 5 warmups")
    if min_sample_ns is None:
        res = time.get_clock_info("perf_counter").resolution
        min_sample_ns = max(1000 * res * 1e9, 1e4)
    for _ in range(warmup):
        fn()
    inner = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        if time.perf_counter_ns() - t0 >= min_sample_ns:
            break
        inner *= 2
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter_ns() - t0) / inner)
    q1, _, q3 = statistics.quantiles(samples, n=4)
    return statistics.median(samples), q3 - q1, inner


def bench_group_scaling(
    T: int = 512,
    groups=(1, 2, 4, 8, 16, 32),
    mode: PathMode | str = PathMode.O3_SPARSE,
    reps: int = 30,
    warmup: int = 5,
    n_atoms: int = 1,
    dtype: torch.dtype = torch.float64,
    seed: int = 0,
    kernel: str = "sparse",
) -> BenchReport:
    """Time ``group_cg`` forward on random inputs for each group count.

    ``path_count`` is the number of channel-pair CG evaluations,
    ``paths * G * (T/G)^2``.  Counts are per atom and checked against both the
    instrumented kernel and ``count(T, G) * G == count(T, 1)``.  The timed
    region runs single-threaded and excludes weight construction.
    """
    mode = PathMode(mode)
    paths = enumerate_paths(mode)
    for G in groups:
        if T % G:
            raise ValueError(f"group count {G} does not divide T={T}")
    base = count_basic_ops(mode, T, 1)
    gen = torch.Generator().manual_seed(seed)
    rows = []
    prev_threads = torch.get_num_threads()
    try:
        for G in groups:
            n = T // G
            A = torch.randn(n_atoms, T, LAYOUT_DIM, generator=gen, dtype=dtype)
            B = torch.randn(n_atoms, T, LAYOUT_DIM, generator=gen, dtype=dtype)
            # one block shared by every path: values do not affect timing and
            # the dense (G, n, n, n) block at G=1 is 1 GiB in 64-bit
            W = torch.randn(G, n, n, n, generator=gen, dtype=dtype) / n
            weights = {p: W for p in paths}
            closed = count_basic_ops(mode, T, G)
            if closed.mults * G != base.mults:
                raise AssertionError(f"mult count at G={G} is not count(T,1)/G")
            counter = OpCounter()
            with torch.no_grad():
                group_cg(A[:1], B[:1], weights, G, mode, kernel="sparse", counter=counter)
            counted = counter.as_count()
            if (counted.mults, counted.adds) != (closed.mults, closed.adds):
                raise AssertionError(f"instrumented count {counted} != closed form {closed} at G={G}")

            def run():
                with torch.no_grad():
                    group_cg(A, B, weights, G, mode, kernel=kernel)

            torch.set_num_threads(1)
            med, iqr, inner = time_callable(run, reps, warmup)
            configure_threads()
            rows.append(BenchRow(
                mode=mode.value, T=T, G=G,
                path_count=len(paths) * G * n * n,
                mult_count=closed.mults, add_count=closed.adds,
                median_ns=med, iqr_ns=iqr,
                mix_mult_count=closed.mix_mults, reps=reps, inner=inner,
            ))
            del weights, W
    finally:
        torch.set_num_threads(prev_threads)
    return BenchReport(rows)


def bench_path_table() -> list[PathRow]:
    """Exact single-channel counts of every triple next to the quoted values.

    Multiplications = nonzero coefficients; additions = mults minus output
    components.  The quoted values are reported, never asserted.
    """
    table = build_cg_table()
    rows = []
    for l1 in range(3):
        for l2 in range(3):
            for lo in range(abs(l1 - l2), min(l1 + l2, 2) + 1):
                block = table.block(lo, l1, l2)
                nz = int(np.count_nonzero(block))
                rows.append(PathRow(l1, l2, lo, nz, nz - (2 * lo + 1),
                                    QUOTED_TABLE.get((lo, l1, l2)), QUOTED_TEXT.get((lo, l1, l2))))
    return rows


def path_table_csv(rows: list[PathRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PATH_HEADER)
    for r in rows:
        w.writerow(["" if getattr(r, k) is None else getattr(r, k) for k in PATH_HEADER])
    return buf.getvalue()
