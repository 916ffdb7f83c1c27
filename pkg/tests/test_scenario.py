import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcmg.profiles import LoadProfile, Segment, profile_eval
from dcmg.scenario import (dump_scenario, find_scenario, load_scenario, parse_scenario,
                           with_value)
from dcmg.solver import simulate
from dcmg.syntax import SemanticError

from conftest import TWO_NODE


def test_minimal_scenario_defaults():
    scn = parse_scenario(TWO_NODE + "profile m1 0:step:1M\n")
    g = scn.topology.node("g1").params
    assert (g.L, g.C_dc, g.R_d) == (100e-6, 1e-3, 1e6)
    assert scn.topology.node("m1").params.C_L == 1e-3
    assert scn.droop.v_bus_ref == 12000.0 and scn.droop.main_bus == "m1"
    assert scn.solver.dt == 10e-6 and scn.solver.method == "rk4"
    assert scn.warnings == ()


def test_override_visible():
    scn = parse_scenario(TWO_NODE + "override g1 C_dc=2m\n")
    assert scn.topology.node("g1").params.C_dc == pytest.approx(2e-3)
    with pytest.raises(SemanticError, match="unknown parameter"):
        parse_scenario(TWO_NODE + "override g1 Q_T=3\n")


def test_missing_profile_warns():
    scn = parse_scenario(TWO_NODE)
    assert any("m1" in w for w in scn.warnings)


def test_sps4zone_bundle(sps4zone):
    assert sps4zone.droop.weights == {"g1": 5.0, "g2": 3.0, "g3": 2.0}
    assert sps4zone.droop.v_bus_ref == 12000.0
    assert sps4zone.step_times() == [5.0, 10.0, 15.0]
    assert sps4zone.duration == 20.0
    loads = {n.id for n in sps4zone.topology.nodes if n.is_load}
    assert set(sps4zone.profiles) == loads


def test_find_scenario_env(tmp_path, monkeypatch):
    (tmp_path / "mine.scn").write_text(TWO_NODE)
    monkeypatch.setenv("DCMG_SCENARIO_PATH", str(tmp_path))
    assert find_scenario("mine") == tmp_path / "mine.scn"
    assert find_scenario("sps4zone").name == "sps4zone.scn"
    with pytest.raises(FileNotFoundError):
        find_scenario("nothing-here")


def test_profile_examples():
    p = LoadProfile.steps([(0, 1e6), (5, 2e6)])
    assert profile_eval(p, 4.999) == 1e6
    assert profile_eval(p, 5.0) == 2e6
    ramp = LoadProfile((Segment(0, "ramp", 1e6), Segment(2, "hold")))
    assert profile_eval(ramp, 1.0) == pytest.approx(0.5e6)
    assert profile_eval(ramp, 3.0) == 1e6
    assert profile_eval(LoadProfile((Segment(1.0, "step", 5.0),)), 0.5) == 0.0


@given(st.lists(st.tuples(st.floats(0.01, 100), st.floats(0, 1e7)), min_size=1, max_size=6,
                unique_by=lambda x: x[0]))
def test_profile_right_continuous(points):
    p = LoadProfile.steps(sorted(points))
    for t, level in sorted(points):
        assert profile_eval(p, t) == level
        assert profile_eval(p, t + 1e-9) == level


def test_profile_invariants():
    with pytest.raises(ValueError):
        LoadProfile((Segment(1, "step", 1), Segment(0, "step", 2)))
    with pytest.raises(ValueError):
        LoadProfile((Segment(0, "step", -1),))
    with pytest.raises(ValueError):
        LoadProfile((Segment(0, "ramp", 1),))


def test_profile_statement_parsing():
    scn = parse_scenario(TWO_NODE + "profile m1 0:step:1M 2:ramp:3M 4:hold\n")
    prof = scn.profiles["m1"]
    assert profile_eval(prof, 3.0) == pytest.approx(2e6)
    assert profile_eval(prof, 10.0) == pytest.approx(3e6)
    with pytest.raises(SemanticError):
        parse_scenario(TWO_NODE + "profile g1 0:step:1M\n")


def test_dump_reload_identical_output(const_load_scenario):
    text = dump_scenario(const_load_scenario)
    again = parse_scenario(text)
    assert again.topology.nodes == const_load_scenario.topology.nodes
    a = simulate(const_load_scenario.topology, const_load_scenario).to_csv()
    b = simulate(again.topology, again).to_csv()
    assert a == b


def test_dump_sps4zone_self_contained(sps4zone):
    again = parse_scenario(dump_scenario(sps4zone))
    assert again.topology == sps4zone.topology
    assert again.profiles == sps4zone.profiles
    assert again.droop == sps4zone.droop and again.zones == sps4zone.zones
    assert again.solver == sps4zone.solver


def test_with_value_paths(sps4zone):
    assert with_value(sps4zone, "ess.omega", "2").ess.omega == 2.0
    assert with_value(sps4zone, "droop.r_base", 5).droop.r_base == 5.0
    assert with_value(sps4zone, "node.g1.C_dc", "2m").topology.node("g1").params.C_dc == 2e-3
    assert with_value(sps4zone, "weights.g3", "4").droop.weights["g3"] == 4.0
    assert with_value(sps4zone, "solver.decimation", "10").solver.record_decimation == 10
    for bad in ("ess.nope", "node.zz.C_dc", "weights.pcm1", "foo"):
        with pytest.raises(KeyError):
            with_value(sps4zone, bad, 1)


def test_bundled_data_files_load():
    for name in ("sps4zone", "droop3", "minimal"):
        scn = load_scenario(name)
        assert scn.name == name
        assert np.isfinite(scn.solver.t_end)
