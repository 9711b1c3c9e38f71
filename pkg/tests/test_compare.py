from __future__ import annotations

import json
import logging

import pytest
from conftest import build_batch, cli, tree_digests

from xbatch.compare import ComparisonSpec, compare, compare_as_lines, target_path, validate_comparability
from xbatch.deliverables.document import PlotDocument
from xbatch.deliverables.models import BUILTINS
from xbatch.errors import CompareError
from xbatch.generation import BatchManifest

UNI = ["population_size.Log2"]
BI = ["population_size.Log2", "saa_noise.all.C2"]


@pytest.fixture(scope="module")
def batches(tmp_path_factory):
    root = tmp_path_factory.mktemp("cmp")
    return {
        "slow": build_batch(root, UNI, controller="slow", ticks_s=10),
        "medium": build_batch(root, UNI, controller="medium", ticks_s=10),
        "fast": build_batch(root, UNI, controller="fast", ticks_s=10),
        "small": build_batch(root, UNI, controller="medium", scenario="small", ticks_s=10),
        "large": build_batch(root, UNI, controller="medium", scenario="large", ticks_s=10),
        "bslow": build_batch(root, BI, controller="slow", ticks_s=10),
        "bfast": build_batch(root, BI, controller="fast", ticks_s=10),
    }


def man(**kw):
    base = dict(project="p", criteria=["population_size.Log4"], platform="platform.refsim", exec_env="hpc.local",
                n_runs=3, exp_setup="exp_setup.T10", axes=[], master_seed=0, controller="a", scenario="s")
    base.update(kw)
    return BatchManifest(**base)


# --- comparability ------------------------------------------------------------------


def test_validate_intra_ok_when_controller_differs():
    d = validate_comparability([man(controller="a"), man(controller="b")])
    assert d.differing == {"controller": ["a", "b"]}
    assert d.ok("intra") and not d.ok("inter")
    assert "controller" in d.reasons["inter_scenario"]


def test_validate_criteria_mismatch_fails_intra():
    d = validate_comparability([man(controller="a"), man(controller="b", criteria=["population_size.Log8"])])
    assert not d.ok("intra")
    assert "criteria" in d.reasons["intra_scenario"]


def test_validate_inter():
    d = validate_comparability([man(scenario="x"), man(scenario="y")])
    assert d.ok("inter") and not d.ok("intra")
    assert d.warnings["inter_scenario"] == []


def test_identical_batches_warn():
    d = validate_comparability([man(), man()])
    assert d.ok("intra") and d.ok("inter")
    assert d.warnings["intra_scenario"] and d.warnings["inter_scenario"]
    assert set(d.matching) >= {"project", "criteria", "scenario", "controller", "n_runs"}


def test_spec_normalizes():
    s = ComparisonSpec("intra", ("a", "b"), "exp0/visits")
    assert s.mode == "intra_scenario" and s.output_id == "exp0.visits"
    with pytest.raises(CompareError):
        ComparisonSpec("intra", ("a",), "t")
    with pytest.raises(CompareError):
        ComparisonSpec("sideways", ("a", "b"), "t")


def test_target_path(tmp_path):
    assert target_path(tmp_path, "g") == tmp_path / "graphs" / "collated" / "g.json"
    assert target_path(tmp_path, "exp3/g") == tmp_path / "graphs" / "exp3" / "g.json"


# --- merging --------------------------------------------------------------------------


def test_intra_series_order(batches):
    roots = tuple(batches[k].root for k in ("slow", "medium", "fast"))
    doc = compare(ComparisonSpec("intra", roots, "collected-vs-size"))
    assert [s.label for s in doc.series] == ["slow", "medium", "fast"]
    for k, s in zip(("slow", "medium", "fast"), doc.series):
        src = PlotDocument.from_json(target_path(batches[k].root, "collected-vs-size").read_text())
        assert s.y == src.series[0].y and s.band_lo == src.series[0].band_lo
    assert [src["root"] for src in doc.provenance["sources"]] == [str(r) for r in roots]


def test_same_batch_twice_warns(batches, caplog):
    r = batches["slow"].root
    with caplog.at_level(logging.WARNING):
        doc = compare(ComparisonSpec("intra", (r, r), "collected-vs-size"))
    assert [s.label for s in doc.series] == ["slow (0)", "slow (1)"]
    assert "same controller" in caplog.text


def test_inter_with_model(batches):
    roots = (batches["small"].root, batches["large"].root)
    doc = compare(ComparisonSpec("inter", roots, "collected-vs-size"), [(BUILTINS["model.constant"], {"value": 3})])
    assert [s.label for s in doc.series] == ["small", "large", "model.constant"]
    assert doc.series[-1].y == [3.0] * len(doc.series[0].x)


def test_intra_rejects_scenario_mismatch(batches):
    with pytest.raises(CompareError, match="scenario"):
        compare(ComparisonSpec("intra", (batches["small"].root, batches["large"].root), "collected-vs-size"))


def test_inter_rejects_controller_mismatch(batches):
    with pytest.raises(CompareError, match="controller"):
        compare(ComparisonSpec("inter", (batches["slow"].root, batches["fast"].root), "collected-vs-size"))


def test_heatmap_panels_and_difference(batches):
    a, b = batches["bslow"].root, batches["bfast"].root
    doc = compare(ComparisonSpec("intra", (a, b), "collected-summary"))
    assert [m.title for m in doc.matrices] == ["slow", "fast", "slow - fast"]
    ma, mb, diff = (m.array() for m in doc.matrices)
    assert (diff == ma - mb).all()
    assert ma.shape == (2, 2)


def test_heatmap_rejects_models(batches):
    spec = ComparisonSpec("intra", (batches["bslow"].root, batches["bfast"].root), "collected-summary")
    with pytest.raises(CompareError, match="linegraph"):
        compare(spec, [(BUILTINS["model.replay"], {})])


def test_intra_exp_heatmap_target(batches):
    spec = ComparisonSpec("intra", (batches["slow"].root, batches["fast"].root), "exp1/visits")
    doc = compare(spec)
    assert len(doc.matrices) == 3 and doc.kind == "heatmap"


def test_as_lines(batches):
    spec = ComparisonSpec("intra", (batches["bslow"].root, batches["bfast"].root), "collected-summary")
    src = PlotDocument.from_json(target_path(batches["bslow"].root, "collected-summary").read_text()).matrices[0]
    rows = compare_as_lines(spec, "row")
    cols = compare_as_lines(spec, "col")
    assert len(rows) == src.rows and len(cols) == src.cols
    for k, doc in enumerate(rows):
        assert [s.label for s in doc.series] == ["slow", "fast"]
        assert doc.series[0].y == list(src.array()[k, :])
        assert doc.series[0].x == list(src.col_labels)
        assert doc.bands_ok()
    with pytest.raises(CompareError, match="heatmap"):
        compare_as_lines(ComparisonSpec("intra", (batches["slow"].root, batches["fast"].root),
                                        "collected-vs-size"), "row")


def test_missing_target_names_root(batches, tmp_path):
    with pytest.raises(CompareError, match=str(batches["slow"].root)):
        compare(ComparisonSpec("intra", (batches["slow"].root, batches["fast"].root), "nope"))
    with pytest.raises(CompareError, match="not a batch root"):
        compare(ComparisonSpec("intra", (batches["slow"].root, tmp_path), "collected-vs-size"))


# --- stage 5 via the CLI ----------------------------------------------------------------


def test_cli_stage5_read_only(batches, tmp_path):
    roots = [batches[k].root for k in ("slow", "medium", "fast")]
    before = {r: tree_digests(r) for r in roots}
    out = tmp_path / "cmp"
    rc = cli("--compare", ",".join(map(str, roots)), "--compare-target", "collected-vs-size",
             "--compare-output-root", out, "--compare-model", "model.constant:value=2", "--log-level", "WARNING")
    assert rc == 0
    assert {r: tree_digests(r) for r in roots} == before
    doc = json.loads((out / "collected-vs-size.json").read_text())
    assert [s["label"] for s in doc["series"]] == ["slow", "medium", "fast", "model.constant"]
    assert (out / "collected-vs-size.svg").is_file()
    assert cli("--compare", ",".join(map(str, roots[:2])), "--compare-target", "exp0/visits",
               "--compare-output-root", out, "--log-level", "WARNING") == 0
    assert (out / "exp0.visits.json").is_file() and (out / "exp0.visits.svg").is_file()
    events = [json.loads(ln) for ln in (out / "events.jsonl").read_text().splitlines()]
    assert events[-1]["stage"] == 5 and events[-1]["outcome"] == "ok"


def test_cli_stage5_as_lines(batches, tmp_path):
    out = tmp_path / "lines"
    roots = f"{batches['bslow'].root},{batches['bfast'].root}"
    assert cli("--compare", roots, "--compare-target", "collected-summary", "--compare-output-root", out,
               "--as-lines", "col", "--log-level", "WARNING") == 0
    assert sorted(p.name for p in out.glob("*.json")) == ["collected-summary.col0.json", "collected-summary.col1.json"]
    assert cli("--compare", roots, "--compare-target", "collected-summary", "--compare-output-root", out,
               "--as-lines", "col", "--compare-model", "model.replay") == 2


def test_cli_stage5_incomparable_fails(batches, tmp_path):
    roots = f"{batches['small'].root},{batches['large'].root}"
    assert cli("--compare", roots, "--compare-target", "collected-vs-size", "--compare-output-root", tmp_path,
               "--log-level", "ERROR") == 1
    events = [json.loads(ln) for ln in (tmp_path / "events.jsonl").read_text().splitlines()]
    assert events[-1]["outcome"] == "failed" and "scenario" in events[-1]["error"]
