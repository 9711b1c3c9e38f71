from __future__ import annotations

import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from xbatch.errors import StatsError
from xbatch.generation import BatchLayout, BatchManifest, AxisInfo
from xbatch.stats import (
    STAT_IDS,
    RunStack,
    SummaryTable,
    dist_stats,
    heatmap_frames,
    inter_exp_stats,
    intra_exp_stats,
    reduce_column,
)
from xbatch.storage import CSV, DataTable, format_value

FINITE = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


def stack_from(arr: np.ndarray) -> RunStack:
    cols = [f"c{k}" for k in range(arr.shape[2])]
    return RunStack(0, "s", [DataTable("s", cols, arr[j]) for j in range(arr.shape[0])])


@settings(max_examples=200, deadline=None)
@given(st.tuples(st.integers(1, 16), st.integers(1, 8), st.integers(1, 8)).flatmap(
    lambda shp: arrays(np.float64, shp, elements=FINITE)))
def test_intra_stats_match_oracle(arr):
    bundle = intra_exp_stats(stack_from(arr))
    want = oracles.cellwise_summary(arr.tolist())
    for s in STAT_IDS:
        np.testing.assert_allclose(bundle.stats[s], np.array(want[s]), rtol=1e-12, atol=1e-9)


@given(st.lists(FINITE, min_size=1, max_size=30))
def test_order_and_band_invariants(xs):
    s = {k: float(v) for k, v in dist_stats(np.array(xs)).items()}
    eps = 1e-9 * (1 + max(abs(x) for x in xs))
    assert s["min"] - eps <= s["q1"] <= s["median"] + eps <= s["q3"] + 2 * eps <= s["max"] + 3 * eps
    assert s["ciL95"] <= s["mean"] + eps <= s["ciH95"] + 2 * eps
    assert s["stddev"] >= 0


def test_single_run_has_zero_spread():
    s = dist_stats(np.array([[3.0, 4.0]]))
    assert list(s["stddev"]) == [0.0, 0.0]
    assert list(s["ciL95"]) == [3.0, 4.0]


def test_known_values():
    s = dist_stats(np.array([1.0, 2.0, 3.0, 4.0]))
    assert s["mean"] == 2.5
    assert s["stddev"] == pytest.approx(math.sqrt(5 / 3))
    assert (s["q1"], s["median"], s["q3"]) == (1.75, 2.5, 3.25)


def test_ragged_stack_rejected():
    a = DataTable("s", ["t", "x"], np.zeros((3, 2)))
    b = DataTable("s", ["t", "x"], np.zeros((4, 2)))
    with pytest.raises(StatsError, match="run1"):
        RunStack(0, "s", [a, b])


@pytest.mark.parametrize("reducer,want", [("final", 3.0), ("mean", 2.0), ("max", 3.0), ("sum", 6.0)])
def test_reducers(reducer, want):
    assert reduce_column(np.array([1.0, 2.0, 3.0]), reducer) == want


def test_unknown_reducer():
    with pytest.raises(StatsError):
        reduce_column(np.array([1.0]), "median")


def test_csv_round_trip_and_missing_cells(tmp_path):
    t = DataTable("x", ["t", "v"], np.array([[1.0, 0.5], [2.0, math.nan]]))
    p = tmp_path / "x.csv"
    p.write_text(CSV.dumps(t))
    assert p.read_text() == "t,v\n1,0.5\n2,\n"
    back = CSV.read(p)
    np.testing.assert_array_equal(back.rows, t.rows)


def test_ragged_csv_rejected(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(StatsError, match=":3"):
        CSV.read(p)


@given(FINITE)
def test_format_value_round_trips(x):
    assert float(format_value(x)) == x


def test_discover(tmp_path):
    for name in ["collected.csv", "spatial.0.csv", "spatial.10.csv", "spatial.2.csv", "run.log"]:
        (tmp_path / name).write_text("a\n1\n")
    assert CSV.discover(tmp_path) == (["collected"], {"spatial": [0, 2, 10]})


def _write_runs(layout: BatchLayout, exp: int, mats: list[list[list[float]]], stem="spatial", k=0):
    for j, m in enumerate(mats):
        d = layout.run_output(exp, j)
        d.mkdir(parents=True, exist_ok=True)
        cols = [f"x{c}" for c in range(len(m[0]))]
        (d / f"{stem}.{k}.csv").write_text(CSV.dumps(DataTable(stem, cols, np.array(m, dtype=float))))


@given(st.tuples(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5)).flatmap(
    lambda shp: arrays(np.int64, shp, elements=st.integers(0, 1000))))
@settings(max_examples=40, deadline=None)
def test_frames_average_matches_oracle(tmp_path_factory, arr):
    layout = BatchLayout(tmp_path_factory.mktemp("frames"))
    _write_runs(layout, 0, arr.tolist())
    (frame,) = heatmap_frames(layout, 0, "spatial", list(range(arr.shape[0])))
    np.testing.assert_allclose(frame, np.array(oracles.cellwise_mean(arr.tolist())), atol=1e-9)


def test_frames_with_inconsistent_snapshot_sets(tmp_path):
    layout = BatchLayout(tmp_path)
    _write_runs(layout, 0, [[[1.0]], [[2.0]]])
    _write_runs(layout, 0, [[[1.0]]], k=1)
    with pytest.raises(StatsError, match="run1"):
        heatmap_frames(layout, 0, "spatial", [0, 1])


def _manifest(shape, n_runs):
    axes = [AxisInfo("a", "x", "linear", [str(i) for i in range(shape[0])], list(range(shape[0])))]
    if shape[1] > 1:
        axes.append(AxisInfo("b", "x", "linear", [str(i) for i in range(shape[1])], list(range(shape[1]))))
    return BatchManifest("p", ["a"], "platform.refsim", "hpc.local", n_runs, "exp_setup.T1", axes, 0)


def test_inter_exp_summary_against_oracle(tmp_path):
    rng = np.random.default_rng(4)
    layout = BatchLayout(tmp_path)
    finals = {}
    for e in range(6):
        for j in range(4):
            d = layout.run_output(e, j)
            d.mkdir(parents=True)
            col = np.cumsum(rng.integers(0, 5, size=10)).astype(float)
            finals.setdefault(e, []).append(float(col[-1]))
            t = DataTable("collected", ["t", "collected"], np.column_stack([np.arange(1, 11), col]))
            (d / "collected.csv").write_text(CSV.dumps(t))
    # exp 2 run 3 failed: excluded
    layout.exec_path(2).write_text(yaml.safe_dump({"runs": [{"run": 3, "exit_code": 1}]}))
    finals[2] = finals[2][:3]
    summary = inter_exp_stats(layout, _manifest((2, 3), 4), "collected", "collected")
    assert summary.shape == (2, 3)
    for e in range(6):
        want = oracles.summary(finals[e])
        for s in STAT_IDS:
            assert summary.stats[s][e] == pytest.approx(want[s], abs=1e-9)
    assert list(summary.n) == [4, 4, 3, 4, 4, 4]
    p = tmp_path / "sum.csv"
    p.write_text(summary.to_csv())
    back = SummaryTable.from_csv(p, "collected", "collected")
    assert back.shape == (2, 3)
    np.testing.assert_allclose(back.matrix("mean"), summary.matrix("mean"))


def test_inter_exp_missing_experiment_gives_nan(tmp_path):
    layout = BatchLayout(tmp_path)
    d = layout.run_output(0, 0)
    d.mkdir(parents=True)
    (d / "collected.csv").write_text("t,collected\n1,5\n")
    summary = inter_exp_stats(layout, _manifest((2, 1), 1), "collected", "collected")
    assert summary.stats["mean"][0] == 5.0
    assert math.isnan(summary.stats["mean"][1])
