import math

import numpy as np
import pytest

from lifonet.engine import InitialCondition, Record, StopRule, Trajectory, init_state
from lifonet.model import build_fig1, build_fig2
from lifonet.observables import (
    EVENT_NAMES,
    CycleMarks,
    cluster_bound,
    cluster_gap_idle,
    clusters_in_window,
    cycle_report,
    detect_clusters,
    find_S1,
    find_T,
    workloads,
)
from lifonet.stochastics import RngStream, sample_interarrivals, solve_nu_params

G = ["1", "2", "3", "4", "5", "6"]
NU = solve_nu_params(100)


def traj(times, Z, W=None, events=None):
    Z = np.asarray(Z, dtype=np.int64)
    W = np.zeros(Z.shape) if W is None else np.asarray(W, dtype=float)
    return Trajectory(
        classes=G, groups=G, stations=["I", "II", "III", "IV"], workload_groups=["3", "6"],
        events=events,
        series={"time": np.asarray(times, dtype=float), "Z": Z, "W": W, "Wtotal": W.sum(axis=1)},
        station_log=None, reason="horizon", truncated=False, t_start=float(times[0]), t_end=float(times[-1]),
        steps=len(times) - 1, min_count=int(Z.sum(axis=1).min()), min_W=0.0,
    )


# -- workloads --------------------------------------------------------------


def test_workloads_examples():
    spec = build_fig1(100, 0.2, nu=NU)
    w = workloads(init_state(spec, seed=0))
    assert (w.W3, w.W6, w.Wtotal) == (0.0, 0.0, 0.0)
    w = workloads(init_state(spec, InitialCondition({"1": 1}), seed=0))
    assert w.Wtotal == pytest.approx(0.008 + 0.8 + 0.808, abs=1e-12)
    w = workloads(init_state(spec, InitialCondition({"3": 1}, residuals={"3": [0.3]}), seed=0))
    assert (w.W3, w.W6, w.Wtotal) == (0.3, 0.0, 0.3)


def test_workloads_fig2_aggregates_stages():
    spec = build_fig2(100, 0.5, nu=NU)
    st = init_state(spec, InitialCondition({"3.2": 1}), seed=0)
    # stage 2 of 5 with 0.125 each: its own residual plus three more stages
    assert workloads(st).W3 == pytest.approx(0.5)


def test_workloads_from_trajectory_row():
    spec = build_fig1(100, 0.2, nu=NU)
    st = init_state(spec, InitialCondition({"3": 2, "6": 1}), seed=0)
    tr = st.run(StopRule(max_events=3), Record(series=True))
    assert workloads(tr, 0).W3 == pytest.approx(2 * 0.808)
    assert workloads(tr, 0).W6 == pytest.approx(0.808)
    with pytest.raises(ValueError):
        workloads(st.run(StopRule(max_events=1)))


# -- clusters ------------------------------------------------------------------


def test_detect_clusters_example():
    cl = detect_clusters([0.0001, 0.0002, 90.0, 90.0001], 80)
    assert [c.size for c in cl] == [2, 2]
    assert [c.start for c in cl] == [0.0001, 90.0]
    assert [c.size for c in detect_clusters([5.0], 1.0)] == [1]
    assert detect_clusters([], 1.0) == []


def test_detect_clusters_errors():
    with pytest.raises(ValueError):
        detect_clusters([2.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        detect_clusters([1.0], 0.0)


def test_clusters_partition_and_idempotent():
    times = np.cumsum(sample_interarrivals(NU, RngStream(0, ("c",)), 5000))
    cl = detect_clusters(times, NU.lower)
    assert sum(c.size for c in cl) == times.size
    assert np.array_equal(np.concatenate([c.arrivals for c in cl]), times)
    again = [detect_clusters(c.arrivals, NU.lower) for c in cl]
    assert all(len(a) == 1 for a in again)
    # within a cluster every gap is the atom
    for c in cl:
        if c.size > 1:
            assert np.allclose(np.diff(c.arrivals), NU.atom, rtol=0, atol=1e-9)


def test_cluster_count_bound_single_path():
    assert NU.gamma >= 0.5
    t0 = 100 * NU.M
    times = np.cumsum(sample_interarrivals(NU, RngStream(7, ("c",)), 40000))
    times = times[times <= t0]
    cl = detect_clusters(times, NU.lower)
    assert clusters_in_window(cl, t0) <= cluster_bound(t0, NU.M)


# -- stopping times -------------------------------------------------------------


def rows(*zs):
    return [list(z) for z in zs]


def test_find_S1_and_T_hand_log():
    times = [0.0, 2.0, 7.5, 9.0, 12.0]
    Z = rows([0, 3, 0, 2, 0, 0], [0, 1, 1, 2, 0, 0], [0, 0, 2, 2, 0, 0], [0, 0, 1, 1, 1, 0], [0, 0, 0, 0, 3, 0])
    tr = traj(times, Z)
    s1 = find_S1(tr)
    assert (s1.time, s1.flag) == (7.5, None)
    T = find_T(tr, s1.time)
    assert T.time == 12.0


def test_find_S1_degenerate_and_missing():
    tr = traj([0.0, 1.0], rows([0, 0, 1, 0, 0, 0], [0, 0, 0, 0, 0, 0]))
    s1 = find_S1(tr)
    assert (s1.time, s1.flag, s1.found) == (0.0, "degenerate", True)
    tr = traj([0.0, 1.0], rows([0, 2, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0]))
    assert find_S1(tr).flag == "not reached"
    assert find_T(tr, math.nan).flag == "S1 missing"


def test_T_equals_S1_when_station_empty():
    tr = traj([0.0, 3.0, 4.0], rows([0, 1, 0, 0, 0, 0], [0, 0, 0, 0, 1, 0], [0, 0, 1, 0, 1, 0]))
    s1 = find_S1(tr)
    assert find_T(tr, s1.time).time == s1.time == 3.0


def test_cycle_report_flags_when_station_never_empties():
    tr = traj([0.0, 1.0, 2.0], rows([0, 1, 1, 0, 0, 0], [0, 0, 2, 0, 1, 0], [0, 0, 1, 0, 2, 0]))
    cm = cycle_report(tr, N=1, delta=0.2)
    assert cm.flags and cm.events() is None and cm.bitmask() == -1


def test_cycle_report_synthetic_all_events():
    N, d = 100, 0.2
    # head drains at t=300, station IV empties at t=320; class 5 ends with 600 >= N/(4 delta) = 125
    times = [0.0, 300.0, 320.0]
    Z = rows([0, 100, 0, 0, 0, 0], [0, 0, 5, 60, 80, 0], [2, 0, 0, 0, 600, 1])
    W = np.zeros((3, 6))
    W[1, 2] = 4.0
    W[2, 5] = 0.5
    cm = cycle_report(traj(times, Z, W), N, d)
    ev = cm.events()
    assert all(ev.values()), ev
    assert cm.bitmask() == 2 ** len(EVENT_NAMES) - 1
    assert (cm.S1, cm.S2, cm.T) == (300.0, 20.0, 320.0)
    assert cm.head_end == 600 and cm.front_end == 2 and cm.min_Z == 100
    assert cm.empirical_a == pytest.approx(max(4.0, 80) / (d**3 * 60))


def test_cycle_marks_mirrored_roles():
    cm = CycleMarks(N=100, delta=0.2, mirrored=True, S1=300.0, T=320.0,
                    Z_S1={"1": 50, "2": 70, "3": 0, "4": 0, "5": 0, "6": 5}, W_loaded_S1=1.0,
                    Z_T={"1": 0, "2": 600, "3": 1, "4": 1, "5": 0, "6": 0}, W_tail_T=0.1, min_Z=90)
    ev = cm.events()
    assert cm.head_end == 600 and cm.front_end == 1
    assert ev["drained"] and ev["grow"] and ev["min_count"]


# -- idle time in cluster gaps ---------------------------------------------------


def gap_traj(events):
    t, k, c, j = zip(*events) if events else ((), (), (), ())
    ev = {"time": np.array(t, dtype=float), "kind": np.array(k), "cls": np.array(c), "job": np.array(j)}
    return traj([0.0, 10.0], rows([0] * 6, [0] * 6), events=ev)


def test_gap_idle_empty_class():
    cl = detect_clusters([0.0, 0.01, 10.0], 5.0)
    out = cluster_gap_idle(gap_traj([]), cl, M=10)
    assert out.idle == pytest.approx(out.gap)
    assert out.cut[0] == pytest.approx(0.02)


def test_gap_idle_occupied_class():
    cl = detect_clusters([0.0, 0.01, 10.0], 5.0)
    eps = 1e-9
    ev = [(0.02 + eps, 0, 2, 7), (5.0, 0, 2, 8), (5.5, 1, 2, 7)]
    out = cluster_gap_idle(gap_traj(ev), cl, M=10)
    assert out.idle[0] == pytest.approx(0.0, abs=1e-8)


def test_gap_idle_ignores_jobs_from_before_cut():
    cl = detect_clusters([0.0, 0.01, 10.0], 5.0)
    # job 3 arrived before the cut and leaves at 4: it does not count as occupying
    ev = [(0.005, 0, 2, 3), (4.0, 1, 2, 3), (6.0, 0, 2, 9), (8.0, 1, 2, 9)]
    out = cluster_gap_idle(gap_traj(ev), cl, M=10)
    assert out.idle[0] == pytest.approx(out.gap[0] - 2.0)
    assert 0 <= out.idle[0] <= out.gap[0]
