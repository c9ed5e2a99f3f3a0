"""Operation-count table and the group-scaling harness."""

import csv
import io

import pytest

from freecg.bench import (
    GROUP_HEADER,
    PATH_HEADER,
    bench_group_scaling,
    bench_path_table,
    path_table_csv,
    time_callable,
)
from freecg.cg_ops import count_basic_ops


def _rows():
    return {(r.lo, r.l1, r.l2): r for r in bench_path_table()}


def test_path_table_covers_all_triples():
    assert len(_rows()) == 15


def test_scalar_and_dot_counts():
    rows = _rows()
    assert rows[(0, 0, 0)].mult_count == 1
    assert rows[(0, 1, 1)].mult_count == 3
    assert rows[(0, 1, 1)].add_count == 2  # u.v: three products, two sums


def test_quoted_values_are_reported():
    rows = _rows()
    assert rows[(0, 0, 0)].quoted_table == 1
    assert rows[(0, 1, 1)].quoted_table == 3
    assert rows[(2, 1, 1)].quoted_table == 9
    assert rows[(2, 2, 2)].quoted_table == 19
    assert rows[(1, 2, 2)].quoted_table == 12
    assert rows[(2, 1, 1)].quoted_text == 13
    # our exact count for the vector square differs from both quoted values
    assert rows[(2, 1, 1)].mult_count == 11


def test_path_csv_schema():
    text = path_table_csv(bench_path_table())
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == PATH_HEADER
    assert len(rows) == 16


def test_group_scaling_small():
    report = bench_group_scaling(T=16, groups=(1, 2, 4), reps=30, warmup=5)
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert rows[0] == GROUP_HEADER
    assert [int(r[2]) for r in rows[1:]] == [1, 2, 4]
    base = report.rows[0]
    for r in report.rows:
        assert r.mult_count * r.G == base.mult_count
        assert r.path_count == 4 * r.G * (16 // r.G) ** 2
        assert r.median_ns > 0 and r.iqr_ns >= 0
        assert r.mult_count == count_basic_ops("sparse", 16, r.G).mults


def test_full_mode_rows():
    report = bench_group_scaling(T=8, groups=(1, 8), mode="full", reps=30, warmup=5)
    assert all(r.mode == "full" for r in report.rows)
    assert report.rows[0].path_count == 8 * 64


def test_nondividing_group_rejected():
    with pytest.raises(ValueError):
        bench_group_scaling(T=12, groups=(5,))


def test_write_csv(tmp_path):
    report = bench_group_scaling(T=8, groups=(2,), reps=30, warmup=5)
    path = tmp_path / "g.csv"
    report.write_csv(path)
    assert path.read_text() == report.to_csv()


def test_timer_contract():
    calls = []
    med, iqr, inner = time_callable(lambda: calls.append(1), reps=30, warmup=5)
    assert inner >= 1 and med > 0
    assert len(calls) >= 5 + 30 * inner
    with pytest.raises(ValueError):
        time_callable(lambda: None, reps=10)
    with pytest.raises(ValueError):
        time_callable(lambda: None, warmup=2)


def test_timer_grows_inner_loop_for_fast_calls():
    _, _, inner = time_callable(lambda: None, min_sample_ns=1e6)
    assert inner > 1
