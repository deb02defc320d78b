import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from lifonet.model import (
    ClassDef,
    Discipline,
    NetworkSpec,
    Source,
    SpecError,
    StateSnapshot,
    Station,
    build_fig1,
    build_fig2,
    dumps,
    exponentialize,
    load_spec,
    loads,
    save_spec,
    stage_count,
    stage_expand,
    state_distance,
    traffic,
    with_discipline,
)
from lifonet.stochastics import Deterministic, ErlangMixture, Exponential, NuLaw, solve_nu_params

NU100 = solve_nu_params(100)


def test_fig1_topology():
    spec = build_fig1(100, 0.2, nu=NU100)
    assert spec.labels == ["1", "2", "3", "4", "5", "6"]
    assert spec.route_from("1") == ["1", "2", "3"]
    assert spec.route_from("4") == ["4", "5", "6"]
    assert {s.name: spec.station_classes(s.name) for s in spec.stations} == {
        "I": ["1", "6"], "II": ["2"], "III": ["5"], "IV": ["3", "4"]}
    assert all(s.discipline is Discipline.LIFO_PREEMPTIVE for s in spec.stations)
    assert [s.entry for s in spec.sources] == ["1", "4"]
    assert isinstance(spec.cls("2").service, Exponential)
    assert isinstance(spec.cls("3").service, Deterministic)


def test_fig1_coupled_delta():
    spec = build_fig1(32768, couple=True)
    assert spec.params["delta"] == pytest.approx(0.5, abs=1e-15)
    assert spec.cls("1").mean == pytest.approx(0.125, abs=1e-15)


def test_fig1_means():
    spec = build_fig1(2000, 0.1)
    assert spec.cls("2").mean == pytest.approx(0.9, abs=1e-15)
    assert spec.cls("3").mean == pytest.approx(0.901, abs=1e-15)


@pytest.mark.parametrize("kw", [dict(M=2, delta=0.999), dict(M=100, delta=1.0), dict(M=100, delta=0.0),
                                dict(M=100, delta=None)])
def test_fig1_rejects(kw):
    with pytest.raises(SpecError):
        build_fig1(kw["M"], kw["delta"])


def test_traffic_exact_with_fractions():
    rep = traffic(build_fig1(100, Fraction(1, 5), nu=NU100))
    # nu has mean 1, so rates are exactly 1
    assert rep.loads["I"] == rep.loads["IV"] == Fraction(816, 1000)
    assert rep.loads["II"] == rep.loads["III"] == Fraction(4, 5)


@pytest.mark.parametrize("delta", [0.5, 0.2, 0.1, 0.3])
def test_traffic_closed_form(delta):
    rep = traffic(build_fig1(100, delta, nu=NU100))
    assert abs(rep.loads["I"] - (1 - delta + 2 * delta**3)) <= 1e-12
    assert abs(rep.loads["II"] - (1 - delta)) <= 1e-12
    assert rep.subcritical


def test_traffic_half():
    rep = traffic(build_fig1(100, 0.5, nu=NU100))
    assert rep.loads == pytest.approx({"I": 0.75, "II": 0.5, "III": 0.5, "IV": 0.75}, abs=1e-15)


@pytest.mark.parametrize("delta,L", [(0.2, 101), (0.5, 5)])
def test_stage_count(delta, L):
    assert stage_count(delta) == L


def test_stage_count_rejects_and_names_nearest():
    with pytest.raises(SpecError, match="nearest valid delta is 0.29975"):
        stage_count(0.3)


def test_fig2_structure_and_loads():
    f1 = build_fig1(100, 0.5, nu=NU100)
    f2 = build_fig2(100, 0.5, nu=NU100)
    assert f2.params["L"] == 5
    assert f2.station_classes("I") == ["1", "6.1", "6.2", "6.3", "6.4", "6.5"]
    assert f2.station_classes("IV") == ["3.1", "3.2", "3.3", "3.4", "3.5", "4"]
    assert all(f2.cls(f"3.{i}").mean == pytest.approx(0.125) for i in range(1, 6))
    assert f2.groups == f1.groups
    l1, l2 = traffic(f1).loads, traffic(f2).loads
    assert all(abs(l1[s] - l2[s]) <= 1e-12 for s in l1)
    assert l2["I"] == pytest.approx(0.75, abs=1e-12)


def test_fig2_rejects_mismatched_L():
    with pytest.raises(SpecError):
        build_fig2(100, 0.5, L=6, nu=NU100)


def test_stage_expand_deterministic_partition():
    spec = build_fig1(100, 0.2, nu=NU100)
    out = stage_expand(spec, "3", 101)
    stages = out.group_members("3")
    assert len(stages) == 101
    assert all(out.cls(k).mean == pytest.approx(0.008, abs=1e-15) for k in stages)
    assert out.route_from("1") == ["1", "2", *stages]
    assert out.params["stage_totals"]["3"] == spec.cls("3").mean


def test_stage_expand_identity_and_erlang():
    spec = build_fig1(100, 0.2, nu=NU100)
    one = stage_expand(spec, "3", 1)
    assert one.labels == ["1", "2", "3.1", "4", "5", "6"]
    assert traffic(one).loads == traffic(spec).loads
    erl = NetworkSpec(
        (ClassDef("a", "S", ErlangMixture.erlang(3, 0.9)),),
        (Source("a", Exponential(2.0)),),
        (Station("S"),),
    )
    out = stage_expand(erl, "a", 3)
    assert [out.cls(k).service for k in out.labels] == [Exponential(0.3)] * 3 or all(
        isinstance(out.cls(k).service, Exponential) and out.cls(k).mean == pytest.approx(0.3) for k in out.labels)
    with pytest.raises(SpecError):
        stage_expand(erl, "a", 0)
    with pytest.raises(SpecError):
        stage_expand(erl, "a", 2)


def test_spec_validation():
    law = Deterministic(1.0)
    with pytest.raises(SpecError):
        NetworkSpec((ClassDef("a", "X", law),), (), (Station("S"),))
    with pytest.raises(SpecError):
        NetworkSpec((ClassDef("a", "S", law, "b"),), (), (Station("S"),))
    with pytest.raises(SpecError):
        NetworkSpec((ClassDef("a", "S", law, "b"), ClassDef("b", "S", law, "a")), (), (Station("S"),))
    with pytest.raises(SpecError):
        NetworkSpec((ClassDef("a", "S", law),), (), (Station("S"), Station("T")))
    with pytest.raises(SpecError):
        Discipline.parse("random")


def test_with_discipline_and_exponentialize():
    spec = build_fig1(100, 0.2, nu=NU100)
    ps = with_discipline(spec, "ps", ["I"])
    assert ps.station("I").discipline is Discipline.PS and ps.station("II").discipline is Discipline.LIFO_PREEMPTIVE
    ex = exponentialize(spec)
    assert all(isinstance(c.service, Exponential) and c.mean == spec.cls(c.label).mean for c in ex.classes)


def test_serialization_round_trip(tmp_path):
    for spec in (build_fig1(100, 0.2, nu=NU100), build_fig2(100, 0.5, nu=NU100),
                 with_discipline(build_fig1(100, Fraction(1, 5), nu=NU100), "hlpps")):
        assert loads(dumps(spec)) == spec
        save_spec(spec, tmp_path / "s.json")
        assert load_spec(tmp_path / "s.json") == spec


# -- state metric ---------------------------------------------------------


def test_distance_examples():
    empty = StateSnapshot()
    assert state_distance(empty, empty) == 0
    assert state_distance(empty, StateSnapshot(counts={"2": 3})) == 3
    a = StateSnapshot(jobs=[(3, 1.0, 0.5)])
    b = StateSnapshot(jobs=[(3, 1.0, 0.25)])
    assert state_distance(a, b) == 0.25


def test_distance_infinite_age_caps():
    a = StateSnapshot(jobs=[(4, math.inf, 0.1)])
    b = StateSnapshot(jobs=[(4, 2.0, 0.1)])
    assert state_distance(a, b) == 1.0
    assert state_distance(a, a) == 0.0


job = st.tuples(st.sampled_from([1, 3, 4, 6]), st.floats(0, 50), st.floats(0, 2))
snap = st.builds(
    StateSnapshot,
    jobs=st.lists(job, max_size=5),
    counts=st.fixed_dictionaries({"2": st.integers(0, 5), "5": st.integers(0, 5)}),
    clocks=st.fixed_dictionaries({"1": st.floats(0, 10), "4": st.floats(0, 10)}),
)


@settings(max_examples=200, deadline=None)
@given(snap, snap, snap)
def test_distance_is_metric(x, y, z):
    dxy, dyx = state_distance(x, y), state_distance(y, x)
    assert dxy == pytest.approx(dyx)
    assert state_distance(x, x) == 0
    assert state_distance(x, z) <= dxy + state_distance(y, z) + 1e-9
