import os
import subprocess
import sys

import pytest

from lifonet.engine import InitialCondition, Record, StopRule, available_backends, default_backend, init_state
from lifonet.model import build_fig1, build_fig2, exponentialize, with_discipline
from lifonet.stochastics import solve_nu_params

NU = solve_nu_params(100)
needs_both = pytest.mark.skipif(len(available_backends()) < 2, reason="compiled kernel not built")


def run_logs(spec, backend, init, n):
    st = init_state(spec, init, seed=21, backend=backend)
    tr = st.run(StopRule(max_events=n), Record(events=True, series=True, stations=True))
    ev = [tr.events[k] for k in ("time", "kind", "cls", "job")]
    se = [tr.series[k] for k in ("time", "Z", "W", "Wtotal")]
    sl = [tr.station_log[k] for k in ("time", "counts", "W", "Wtotal")]
    return b"".join(a.tobytes() for a in ev + se + sl), st.snapshot()


@needs_both
@pytest.mark.parametrize("disc", ["lifo_preemptive", "lifo_nonpreemptive", "fifo", "ps", "hlpps", "is"])
def test_identical_logs_fig1(disc):
    spec = with_discipline(build_fig1(100, 0.2, nu=NU), disc)
    init = InitialCondition({"2": 40, "4": 10, "6": 3})
    a, sa = run_logs(spec, "cython", init, 8000)
    b, sb = run_logs(spec, "python", init, 8000)
    assert a == b
    assert sa == sb


@needs_both
def test_identical_logs_fig2_and_exponential():
    for spec in (build_fig2(100, 0.5, nu=NU), with_discipline(exponentialize(build_fig1(100, 0.2, nu=NU)), "hlpps")):
        init = InitialCondition({"2": 20})
        assert run_logs(spec, "cython", init, 8000)[0] == run_logs(spec, "python", init, 8000)[0]


@needs_both
def test_stop_reasons_agree():
    spec = build_fig1(100, 0.2, nu=NU)
    out = []
    for b in ("cython", "python"):
        st = init_state(spec, InitialCondition({"2": 30}), seed=2, backend=b)
        r1 = st.run(StopRule(until_empty=["2"]))
        r2 = st.run(StopRule(until_empty=["IV"], cap=7))
        out.append((r1.reason, r1.steps, r1.t_end, r1.min_count, r2.reason, r2.steps))
    assert out[0] == out[1]


def test_default_backend_and_env_override():
    assert default_backend() in available_backends()
    code = "from lifonet.engine import default_backend; print(default_backend())"
    env = dict(os.environ, LIFONET_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend_rejected():
    with pytest.raises(ImportError):
        init_state(build_fig1(100, 0.2, nu=NU), backend="fortran")
