from __future__ import annotations

import pytest
from conftest import TEMPLATE
from hypothesis import given
from hypothesis import strategies as st

import oracles
from xbatch.criteria import ParserRegistry, parse_batch_criteria
from xbatch.errors import SeedTableError, UsageError, XmlError
from xbatch.generation import (
    AxisInfo,
    BatchLayout,
    BatchManifest,
    ExtraChanges,
    SeedTable,
    assign_seeds,
    compute_seeds,
    generate_batch,
    parse_exp_setup,
    run_seed,
    splitmix64,
)
from xbatch.platform import REFSIM
from xbatch.xmlops import AttributeChangeSet, Change, get_attr, load_template, parse_bytes

REG = ParserRegistry.build()


def manifest_for(bc, n_runs, seed=5):
    return BatchManifest(
        project="t", criteria=list(bc.tokens), platform=REFSIM.id, exec_env="hpc.local", n_runs=n_runs,
        exp_setup="exp_setup.T10", axes=[AxisInfo.from_def(d) for d in (bc.axis_a, bc.axis_b) if d],
        master_seed=seed,
    )


def gen(root, tokens, n_runs=2, seed=5, extra=None, template=None):
    bc = parse_batch_criteria(tokens, REG)
    seeds = compute_seeds(seed, bc.cardinality, n_runs)
    return generate_batch(root, template or load_template(TEMPLATE), bc, n_runs, parse_exp_setup("exp_setup.T10"),
                          REFSIM, manifest_for(bc, n_runs, seed), seeds, extra), bc, seeds


def test_splitmix64_reference_sequence():
    # first outputs of the reference generator from state 0
    state, first = oracles.splitmix64_next(0)
    assert first == 0xE220A8397B1DCDAF
    assert splitmix64(0) == first
    assert splitmix64(state) == oracles.splitmix64_next(state)[1]


@given(st.integers(0, (1 << 64) - 1), st.integers(0, 50), st.integers(0, 50))
def test_run_seed_matches_definition(master, e, r):
    x = (master + 0x9E3779B97F4A7C15 * ((e << 32) | r)) & oracles.MASK64
    assert run_seed(master, e, r) == oracles.splitmix64_next(x)[1]


@given(st.integers(0, (1 << 64) - 1))
def test_seeds_unique_within_batch(master):
    t = compute_seeds(master, 13, 20)
    flat = [s for row in t.seeds for s in row]
    assert len(set(flat)) == len(flat)


def test_exp_setup_parsing():
    s = parse_exp_setup("exp_setup.T10000.K5")
    assert (s.duration_s, s.controller_hz) == (10000, 5)
    assert parse_exp_setup(s.token) == s
    for bad in ["exp_setup.K5", "exp_setup.T10.T20", "exp_setup.Tx", "setup.T10", "exp_setup.T0"]:
        with pytest.raises(UsageError):
            parse_exp_setup(bad)


def test_run_directories_equal_cardinality_times_runs(tmp_path):
    layout, bc, _ = gen(tmp_path / "b", ["population_size.Log8", "saa_noise.all.C3"], n_runs=3)
    inputs = list(layout.inputs.glob("exp*/run*/input.xml"))
    assert bc.cardinality == 12
    assert len(inputs) == 12 * 3


def test_inputs_carry_criteria_seed_and_ticks(tmp_path):
    layout, bc, seeds = gen(tmp_path / "b", ["population_size.Log8", "saa_noise.all.C2"])
    t = load_template(layout.run_input(5, 1) / "input.xml")
    # exp 5 = row 2 (size 4), col 1 (noise 1.0)
    assert get_attr(t, "/refsim/agents", "count") == "4"
    assert get_attr(t, "/refsim/agents", "noise") == "1.0"
    assert get_attr(t, "/refsim/seed", "value") == str(seeds.seed(5, 1))
    assert get_attr(t, "/refsim/time", "ticks") == str(10 * REFSIM.default_hz)


def test_extra_changes_apply_after_criteria(tmp_path):
    extra = ExtraChanges(
        AttributeChangeSet.of([Change("set_attr", "/refsim/arena", "side", "9")]),
        {1: AttributeChangeSet.of([Change("set_attr", "/refsim/arena", "side", "11")])},
    )
    layout, _, _ = gen(tmp_path / "b", ["population_size.Log2"], extra=extra)
    assert get_attr(load_template(layout.run_input(0, 0) / "input.xml"), "/refsim/arena", "side") == "9"
    assert get_attr(load_template(layout.run_input(1, 0) / "input.xml"), "/refsim/arena", "side") == "11"


def test_generation_is_deterministic(tmp_path):
    a, _, _ = gen(tmp_path / "a", ["population_size.Log4"])
    b, _, _ = gen(tmp_path / "b", ["population_size.Log4"])
    for p in a.inputs.rglob("input.xml"):
        assert p.read_bytes() == (b.inputs / p.relative_to(a.inputs)).read_bytes()


def test_failed_generation_leaves_previous_inputs(tmp_path):
    layout, _, _ = gen(tmp_path / "b", ["population_size.Log4"])
    before = sorted(p.read_bytes() for p in layout.inputs.rglob("input.xml"))
    broken = parse_bytes(b"<refsim><agents count='1'/></refsim>")
    with pytest.raises(XmlError):
        gen(tmp_path / "b", ["population_size.Log4"], template=broken)
    assert sorted(p.read_bytes() for p in layout.inputs.rglob("input.xml")) == before
    assert not list(layout.root.glob(".exp-inputs*"))


def test_manifest_round_trip_and_created_preserved(tmp_path):
    layout, _, _ = gen(tmp_path / "b", ["population_size.Log4"])
    m = layout.read_manifest()
    assert BatchManifest.from_yaml(m.to_yaml()) == m
    created = m.created
    gen(tmp_path / "b", ["population_size.Log4"])
    assert layout.read_manifest().created == created


def test_seed_table_reuse_and_mismatch(tmp_path):
    t1 = assign_seeds(9, 4, 3, tmp_path)
    assert (tmp_path / "seeds.yaml").is_file()
    assert assign_seeds(None, 4, 3, tmp_path).seeds == t1.seeds
    with pytest.raises(SeedTableError, match="--force-regen"):
        assign_seeds(9, 5, 3, tmp_path)
    with pytest.raises(SeedTableError, match="--force-regen"):
        assign_seeds(10, 4, 3, tmp_path)
    t2 = assign_seeds(10, 5, 3, tmp_path, force_regen=True)
    assert t2.shape == (5, 3) and t2.master_seed == 10


def test_seed_table_yaml_round_trip():
    t = compute_seeds(123, 3, 4)
    assert SeedTable.from_yaml(t.to_yaml()).seeds == t.seeds


def test_layout_paths():
    lay = BatchLayout(tmp := __import__("pathlib").Path("/x"))
    assert lay.run_input(2, 3) == tmp / "exp-inputs" / "exp2" / "run3"
    assert lay.run_output(2, 3) == tmp / "exp-outputs" / "exp2" / "run3"
    assert lay.exec_path(1) == tmp / "exp-outputs" / "exp1" / "exec.yaml"
