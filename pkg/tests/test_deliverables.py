from __future__ import annotations

import logging
import math
import stat
import sys

import numpy as np
import pytest
from conftest import GOLDEN
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xbatch.deliverables.config import GraphTarget, parse_graph_config
from xbatch.deliverables.document import (
    Axis,
    MatrixPayload,
    PlotDocument,
    Series,
    band_series,
    gen_heatmap,
    gen_inter_linegraph,
    gen_summary_heatmap,
)
from xbatch.deliverables.models import BUILTINS, ModelPlugin, overlay_models, resolve_model
from xbatch.deliverables.svg import render_plot
from xbatch.deliverables.video import emit_video_cmd
from xbatch.errors import ConfigError, DeliverableError
from xbatch.generation import AxisInfo, BatchManifest
from xbatch.stats import STAT_IDS, SummaryTable, dist_stats
from xbatch.storage import DataTable

LINE = GraphTarget("g", "linegraph", "collected", column="collected", title="T")
HEAT = GraphTarget("h", "heatmap", "collected", column="collected", title="H")


def manifest(*axes):
    return BatchManifest("p", [a.token for a in axes], "platform.refsim", "hpc.local", 3, "exp_setup.T1",
                         list(axes), 0)


def log_axis(n):
    vals = [2**i for i in range(n)]
    return AxisInfo(f"population_size.Log{vals[-1]}", "population_log", "geometric", [f"size={v}" for v in vals],
                    vals)


def summary_for(shape, seed=0):
    rng = np.random.default_rng(seed)
    card = shape[0] * shape[1]
    runs = rng.normal(50, 10, size=(5, card))
    st_ = dist_stats(runs)
    return SummaryTable("collected", "collected", "final", shape, np.full(card, 5.0), {s: st_[s] for s in STAT_IDS})


# --- config --------------------------------------------------------------------


def test_config_three_targets():
    cfg = parse_graph_config({"targets": [
        {"id": "a", "kind": "linegraph", "stem": "s", "column": "c"},
        {"id": "b", "kind": "linegraph", "stem": "s", "column": "d", "scope": "intra_exp"},
        {"id": "c", "kind": "heatmap", "stem": "spatial", "scope": "intra_exp"},
    ]})
    assert [t.id for t in cfg.targets] == ["a", "b", "c"]


def test_config_empty_is_noop():
    assert parse_graph_config(None).targets == []


def test_config_errors():
    with pytest.raises(ConfigError, match="'a'"):
        parse_graph_config({"targets": [{"id": "a", "kind": "linegraph", "stem": "s", "column": "c"}] * 2})
    with pytest.raises(ConfigError, match="'z'"):
        parse_graph_config({"targets": [{"id": "z", "kind": "pie", "stem": "s"}]})
    with pytest.raises(ConfigError, match="video"):
        parse_graph_config({"targets": [{"id": "v", "kind": "video", "stem": "s"}]})
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_graph_config({"targets": [{"id": "a", "kind": "heatmap", "stem": "s", "scope": "intra_exp",
                                         "colour": "red"}]})


def test_config_unknown_top_level_key_warns(caplog):
    with caplog.at_level(logging.WARNING):
        cfg = parse_graph_config({"targets": [], "themes": {}})
    assert cfg.targets == [] and "themes" in caplog.text


# --- documents -----------------------------------------------------------------


def test_inter_linegraph_log128():
    ax = log_axis(8)
    doc = gen_inter_linegraph(summary_for((8, 1)), LINE, manifest(ax))
    (s,) = doc.series
    assert s.x == [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]
    assert doc.x_axis.scale == "log2"
    assert doc.bands_ok()


def test_inter_linegraph_bw_bands():
    sm = summary_for((4, 1))
    doc = gen_inter_linegraph(sm, LINE, manifest(log_axis(4)), dist_stats="bw")
    (s,) = doc.series
    assert s.band_lo == list(sm.stats["q1"]) and s.band_hi == list(sm.stats["q3"])
    assert s.whisker_lo == list(sm.stats["min"]) and s.whisker_hi == list(sm.stats["max"])


def test_inter_linegraph_single_point():
    doc = gen_inter_linegraph(summary_for((1, 1)), LINE, manifest(log_axis(1)))
    assert len(doc.series[0].x) == 1


def test_inter_linegraph_rejects_bivariate():
    with pytest.raises(DeliverableError, match="heatmap"):
        gen_inter_linegraph(summary_for((4, 2)), LINE, manifest(log_axis(4), log_axis(2)))


def test_summary_heatmap_labels():
    a, b = log_axis(13), log_axis(10)
    doc = gen_summary_heatmap(summary_for((13, 10)), HEAT, manifest(a, b))
    (m,) = doc.matrices
    assert (m.rows, m.cols) == (13, 10)
    assert m.row_labels == a.labels and m.col_labels == b.labels
    assert doc.y_axis.label == a.token and doc.x_axis.label == b.token


def test_heatmap_single_cell_and_ragged():
    assert gen_heatmap([[1.0]], HEAT).matrices[0].cells == [[1.0]]
    with pytest.raises(DeliverableError):
        gen_heatmap([[1.0, 2.0], [3.0]], HEAT)


def test_series_length_mismatch():
    with pytest.raises(DeliverableError):
        Series("s", [1, 2], [1.0])


DOC_SERIES = st.integers(1, 10).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-1e9, 1e9), min_size=n, max_size=n),
    st.lists(st.one_of(st.floats(-1e9, 1e9), st.just(math.nan)), min_size=n, max_size=n),
))


@given(st.lists(DOC_SERIES, max_size=3), st.text(max_size=20))
def test_document_json_round_trip(series, title):
    doc = PlotDocument("linegraph", title, Axis("x", "log2"), Axis("y"),
                       [Series(f"s{k}", x, y) for k, (x, y) in enumerate(series)], provenance={"k": "v"})
    text = doc.to_json()
    back = PlotDocument.from_json(text)
    assert back.to_json() == text
    for a, b in zip(doc.series, back.series):
        assert all((u == v) or (math.isnan(u) and math.isnan(v)) for u, v in zip(a.y, b.y))


@settings(max_examples=100, deadline=None)
@given(st.tuples(st.integers(1, 12), st.integers(1, 9)).flatmap(
    lambda shp: arrays(np.float64, shp, elements=st.floats(-1e6, 1e6))), st.sampled_from(["conf95", "bw"]))
def test_band_containment_property(runs, mode):
    s = dist_stats(runs)
    series = band_series("s", list(range(runs.shape[1])), s, mode)
    assert series.check_bands(tol=1e-6 * (1 + np.abs(runs).max()))


# --- models ----------------------------------------------------------------------


def base_doc():
    return gen_inter_linegraph(summary_for((8, 1)), LINE, manifest(log_axis(8)))


def test_constant_model_overlay():
    doc = base_doc()
    out = overlay_models(doc, [(BUILTINS["model.constant"], {"value": 7})])
    assert len(out.series) == 2
    assert out.series[1].y == [7.0] * 8 and out.series[1].style["dash"]
    assert out.series[0].to_dict() == doc.series[0].to_dict()
    assert len(doc.series) == 1


def test_replay_model_equals_empirical():
    out = overlay_models(base_doc(), [(BUILTINS["model.replay"], {})])
    assert out.series[1].y == out.series[0].y


def test_model_length_mismatch_names_model():
    bad = ModelPlugin("model.short", "any", lambda ctx: DataTable("m", ["y"], np.zeros((3, 1))))
    with pytest.raises(DeliverableError, match="model.short"):
        overlay_models(base_doc(), [(bad, {})])


def test_model_scope_mismatch():
    intra = ModelPlugin("model.i", "intra_exp", BUILTINS["model.replay"].evaluate)
    with pytest.raises(DeliverableError, match="scope"):
        overlay_models(base_doc(), [(intra, {})])


def test_external_model_plugin(tmp_path):
    d = tmp_path / "double"
    d.mkdir()
    (d / "plugin.yaml").write_text("type: model\nid: model.double\nscope: inter_exp\ncommand: run.py\n")
    script = d / "run.py"
    script.write_text(
        f"#!{sys.executable}\n"
        "import json, sys\n"
        "req = json.load(open(sys.argv[1]))\n"
        "with open(sys.argv[2], 'w') as fh:\n"
        "    fh.write('x,y\\n')\n"
        "    for x, y in zip(req['x'], req['y']):\n"
        "        fh.write(f'{x},{2 * y}\\n')\n"
    )
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    model = resolve_model("model.double", [tmp_path])
    out = overlay_models(base_doc(), [(model, {})])
    assert out.series[1].y == pytest.approx([2 * y for y in out.series[0].y])


def test_unknown_model():
    with pytest.raises(ConfigError):
        resolve_model("model.nope", [])


# --- rendering ------------------------------------------------------------------


def golden_line_doc():
    return PlotDocument(
        "linegraph", "Golden line", Axis("size", "log2"), Axis("objects"),
        [Series("empirical", [1.0, 2.0, 4.0], [3.0, 5.5, 9.0], [2.0, 4.5, 7.0], [4.0, 6.5, 11.0]),
         Series("model.constant", [1.0, 2.0, 4.0], [6.0, 6.0, 6.0], style={"dash": True, "model": True})],
    )


def golden_heatmap_doc():
    return PlotDocument("heatmap", "Golden heatmap", Axis("b"), Axis("a"), matrices=[
        MatrixPayload([[0.0, 1.0, 2.0], [3.0, math.nan, 5.0]], ["r0", "r1"], ["c0", "c1", "c2"], "panel"),
    ])


@pytest.mark.parametrize("doc,name", [(golden_line_doc, "line.svg"), (golden_heatmap_doc, "heatmap.svg")])
def test_svg_golden(doc, name):
    assert render_plot(doc()) == (GOLDEN / name).read_text()


def test_svg_empty_document_renders_axes():
    svg = render_plot(PlotDocument("linegraph", "", Axis("x"), Axis("y")))
    assert svg.startswith("<?xml") and "<rect" in svg and "polyline" not in svg


def test_svg_is_deterministic():
    assert render_plot(golden_line_doc()) == render_plot(PlotDocument.from_json(golden_line_doc().to_json()))


# --- video ---------------------------------------------------------------------


def test_video_cmd(tmp_path):
    for k in range(10):
        (tmp_path / f"frame_{k:04d}.svg").write_text("<svg/>")
    cmd = emit_video_cmd(tmp_path, "-r 30", output=tmp_path / "out.mp4")
    assert "-r 30" in cmd and "-framerate 10" in cmd and str(tmp_path / "frame_*.svg") in cmd
    assert emit_video_cmd(tmp_path, output="o.mp4").endswith(" o.mp4")
    custom = emit_video_cmd(tmp_path, "-crf 18", template="enc {input_glob} {output}", output="o.mp4")
    assert custom.endswith("o.mp4 -crf 18")


def test_video_cmd_empty_dir(tmp_path):
    with pytest.raises(DeliverableError):
        emit_video_cmd(tmp_path)
