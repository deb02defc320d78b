"""Discrete-event execution of a NetworkSpec.

The event loop lives in a kernel object with two interchangeable
implementations: the compiled ``_kernel`` extension and the pure-Python
``_pykernel`` twin.  The compiled one is used when it imports; set
``LIFONET_BACKEND=python`` to force the fallback.  Both consume the same
pre-drawn variate blocks, so they produce identical trajectories.

Ordering rules: events run in ``(time, sequence)`` order; at a station jobs
are ranked by ``(class arrival stamp, id)`` with ``id`` the global creation
index.  Initial jobs carry the stamp ``-inf`` and are served first-come
first-served among themselves.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _pykernel
from .model import Discipline, NetworkSpec, SpecError, StateSnapshot
from .stochastics import Deterministic, ErlangMixture, Exponential, NuLaw, RngStream

try:  # pragma: no cover - depends on the build
    from . import _kernel as _ext
except ImportError:  # pragma: no cover
    _ext = None

BLOCK = 4096
EVENT_CAP = 10**9
EVENT_KINDS = ("arrival", "departure", "preempt", "resume")
STOP_REASONS = ("horizon", "max_events", "predicate", "cap", "idle")

_DISC_CODE = {
    Discipline.LIFO_PREEMPTIVE: _pykernel.LIFO_P,
    Discipline.LIFO_NONPREEMPTIVE: _pykernel.LIFO_NP,
    Discipline.FIFO: _pykernel.FIFO,
    Discipline.PS: _pykernel.PS,
    Discipline.HLPPS: _pykernel.HLPPS,
    Discipline.IS: _pykernel.IS,
}
AUDIT_NAMES = (
    "time_monotonicity",
    "work_conservation",
    "selection",
    "nonpreemption",
    "flow_conservation",
    "count_reconstruction",
    "service_accounting",
    "residual_bounds",
    "allocation_rates",
)


def available_backends() -> list[str]:
    return ["cython", "python"] if _ext is not None else ["python"]


def default_backend() -> str:
    forced = os.environ.get("LIFONET_BACKEND", "").strip().lower()
    if forced:
        if forced not in ("cython", "python"):
            raise ValueError(f"LIFONET_BACKEND must be 'cython' or 'python', got {forced!r}")
        if forced == "cython" and _ext is None:
            raise ImportError("compiled kernel requested but lifonet._kernel is not built")
        return forced
    return "cython" if _ext is not None else "python"


# ---------------------------------------------------------------------------
# Table compilation
# ---------------------------------------------------------------------------


class _Streams:
    """Labelled variate streams, allocated on first use."""

    def __init__(self):
        self.ids: dict[tuple[str, str], int] = {}
        self.labels: list[tuple[str, str]] = []

    def get(self, label: str, kind: str) -> int:
        key = (label, kind)
        if key not in self.ids:
            self.ids[key] = len(self.labels)
            self.labels.append(key)
        return self.ids[key]


def _mixture_rows(law: ErlangMixture, tables: dict) -> tuple[int, int]:
    start = len(tables["mix_k"])
    acc = 0.0
    for w, k, m in law.components:
        acc += w
        tables["mix_cumw"].append(acc)
        tables["mix_k"].append(k)
        tables["mix_mean"].append(m)
    return start, len(law.components)


def compile_tables(spec: NetworkSpec) -> tuple[dict, list[tuple[str, str]]]:
    """Flatten a spec into the kernel's integer/float tables.

    Returns the tables and the ``(label, kind)`` list of variate streams,
    ``kind`` being ``"u"`` for uniforms and ``"e"`` for unit exponentials.
    """
    labels = spec.labels
    groups = spec.groups
    station_names = [s.name for s in spec.stations]
    streams = _Streams()
    t: dict = {
        "K": len(labels),
        "S": len(station_names),
        "G": len(groups),
        "nsrc": len(spec.sources),
        "mix_cumw": [],
        "mix_k": [],
        "mix_mean": [],
    }
    for key in ("cls_station", "cls_next", "cls_group", "cls_kind", "cls_mean", "cls_mix_start",
                "cls_mix_len", "cls_ustream", "cls_estream"):
        t[key] = []
    for c in spec.classes:
        t["cls_station"].append(station_names.index(c.station))
        t["cls_next"].append(labels.index(c.next) if c.next is not None else -1)
        t["cls_group"].append(groups.index(c.parent))
        t["cls_mean"].append(float(c.mean))
        law = c.service
        us = es = -1
        ms, ml = 0, 0
        if isinstance(law, Deterministic):
            kind = 0
        elif isinstance(law, Exponential):
            kind = 1
            es = streams.get(f"service:{c.label}", "e")
        elif isinstance(law, ErlangMixture):
            kind = 2
            ms, ml = _mixture_rows(law, t)
            if ml > 1:
                us = streams.get(f"service:{c.label}", "u")
            es = streams.get(f"service:{c.label}", "e")
        else:
            raise SpecError(f"class {c.label}: unsupported service law {law!r}")
        t["cls_kind"].append(kind)
        t["cls_mix_start"].append(ms)
        t["cls_mix_len"].append(ml)
        t["cls_ustream"].append(us)
        t["cls_estream"].append(es)

    # remaining work along the route, summed from the route's end backwards
    K = len(labels)
    tail_grp = [0.0] * K
    tail_tot = [0.0] * K
    done = [False] * K

    def fill(k):
        if done[k]:
            return
        nk = t["cls_next"][k]
        if nk >= 0:
            fill(nk)
            tail_tot[k] = t["cls_mean"][nk] + tail_tot[nk]
            if t["cls_group"][nk] == t["cls_group"][k]:
                tail_grp[k] = t["cls_mean"][nk] + tail_grp[nk]
        done[k] = True

    for k in range(K):
        fill(k)
    t["cls_tail_grp"] = tail_grp
    t["cls_tail_tot"] = tail_tot

    # Deterministic stage chains keep one residual for the whole chain so a job
    # served without interruption finishes its last stage at exactly the time
    # the unsplit class would.
    totals = spec.params.get("stage_totals", {})
    chain_tail = [0.0] * K
    chain_entry = [-1.0] * K
    cont = [0] * K
    for g in groups:
        members = [labels.index(m) for m in spec.group_members(g)]
        if len(members) < 2 or not all(t["cls_kind"][k] == 0 for k in members):
            continue
        inside = set(members)
        preds = {t["cls_next"][k]: k for k in range(K) if t["cls_next"][k] in inside}
        for k in members:
            chain_tail[k] = tail_grp[k]
            p = preds.get(k)
            if p is not None and p in inside and t["cls_station"][p] == t["cls_station"][k]:
                cont[k] = 1
            else:
                chain_entry[k] = float(totals[g]) if g in totals else t["cls_mean"][k] + tail_grp[k]
    t["cls_chain_tail"] = chain_tail
    t["cls_chain_entry"] = chain_entry
    t["cls_cont"] = cont
    t["st_disc"] = [_DISC_CODE[s.discipline] for s in spec.stations]

    for key in ("src_class", "src_kind", "src_p", "src_mix_start", "src_mix_len", "src_ustream", "src_estream"):
        t[key] = []
    for src in spec.sources:
        law = src.law
        name = f"arrival:{src.entry}"
        us = es = -1
        ms, ml = 0, 0
        if isinstance(law, NuLaw):
            p = law.params
            kind = 0
            row = [1.0 - 1.0 / p.M, 1.0 / p.M**2, p.gamma * p.M, 2.0 * p.M, p.beta]
            us = streams.get(name, "u")
            es = streams.get(name, "e")
        elif isinstance(law, Exponential):
            kind, row = 1, [float(law.mean)]
            es = streams.get(name, "e")
        elif isinstance(law, Deterministic):
            kind, row = 2, [float(law.mean)]
        elif isinstance(law, ErlangMixture):
            kind, row = 3, []
            ms, ml = _mixture_rows(law, t)
            if ml > 1:
                us = streams.get(name, "u")
            es = streams.get(name, "e")
        else:
            raise SpecError(f"source {src.entry}: unsupported interarrival law {law!r}")
        t["src_class"].append(labels.index(src.entry))
        t["src_kind"].append(kind)
        t["src_p"].append(row + [0.0] * (5 - len(row)))
        t["src_mix_start"].append(ms)
        t["src_mix_len"].append(ml)
        t["src_ustream"].append(us)
        t["src_estream"].append(es)
    t["nstreams"] = len(streams.labels)
    return t, list(streams.labels)


# ---------------------------------------------------------------------------
# Run configuration and results
# ---------------------------------------------------------------------------


@dataclass
class InitialCondition:
    """Jobs present at time 0 and first interarrival times.

    ``counts`` maps class labels to job counts; ``residuals`` optionally gives
    remaining service for the first jobs of a class (others are sampled);
    ``clocks`` maps source entry labels to the first interarrival time
    (others are sampled).
    """

    counts: Mapping[str, int] = field(default_factory=dict)
    residuals: Mapping[str, Sequence[float]] = field(default_factory=dict)
    clocks: Mapping[str, float] = field(default_factory=dict)

    def validate(self, spec: NetworkSpec) -> None:
        labels = set(spec.labels)
        for k, n in self.counts.items():
            if k not in labels:
                raise SpecError(f"initial condition names unknown class {k!r}")
            if int(n) != n or n < 0:
                raise SpecError(f"initial count for class {k} must be a nonnegative integer, got {n}")
        for k, res in self.residuals.items():
            if k not in labels:
                raise SpecError(f"initial residuals name unknown class {k!r}")
            if len(res) > self.counts.get(k, 0):
                raise SpecError(f"class {k}: {len(res)} residuals for {self.counts.get(k, 0)} jobs")
            if any(not (r >= 0 and math.isfinite(r)) for r in res):
                raise SpecError(f"class {k}: residuals must be finite and nonnegative")
        entries = {s.entry for s in spec.sources}
        for k, u in self.clocks.items():
            if k not in entries:
                raise SpecError(f"no external source enters class {k!r}")
            if not (u >= 0 and math.isfinite(u)):
                raise SpecError(f"source clock for class {k} must be finite and nonnegative")


@dataclass
class StopRule:
    """When to stop a run.

    Any combination is allowed; the first condition met wins.
    ``until_empty`` names classes, groups or stations whose joint job count
    must hit zero.  ``predicate`` is evaluated after every event (slow: it
    steps the kernel one event at a time).
    """

    horizon: float = math.inf
    max_events: int | None = None
    until_empty: Sequence[str] = ()
    predicate: Callable[["SimState"], bool] | None = None
    cap: int = EVENT_CAP

    @property
    def has_goal(self) -> bool:
        return bool(self.until_empty) or self.predicate is not None


@dataclass
class Record:
    """What a run keeps besides the end state.

    ``series`` samples counts and workloads per group after every event, or
    on a time grid of spacing ``grid`` when given.  ``stations`` keeps a row
    whenever a job enters, leaves or changes station.  ``audit`` re-checks
    the discipline invariants by brute force after every event.
    """

    events: bool = False
    series: bool = False
    grid: float | None = None
    stations: bool = False
    audit: bool = False


@dataclass
class Trajectory:
    classes: list[str]
    groups: list[str]
    stations: list[str]
    workload_groups: list[str]
    events: dict | None
    series: dict | None
    station_log: dict | None
    reason: str
    truncated: bool
    t_start: float
    t_end: float
    steps: int
    min_count: int
    min_W: float
    audit: dict | None = None
    backend: str = ""

    @property
    def goal_reached(self) -> bool:
        return self.reason == "predicate"

    def event_rows(self):
        """Event log rows ``(time, kind, class label, job id)``."""
        if self.events is None:
            return []
        ev = self.events
        return [
            (float(t), EVENT_KINDS[k], self.classes[c], int(j))
            for t, k, c, j in zip(ev["time"], ev["kind"], ev["cls"], ev["job"])
        ]

    def Z(self, group: str) -> np.ndarray:
        return self.series["Z"][:, self.groups.index(group)]

    def W(self, group: str) -> np.ndarray:
        return self.series["W"][:, self.groups.index(group)]

    @property
    def audit_ok(self) -> bool:
        return self.audit is not None and not any(self.audit["counts"].values())


def _trajectory(state, rec: Record, res: dict, raw: dict, truncated: bool) -> Trajectory:
    G = len(state.groups)
    S = len(state.station_names)
    events = series = stations = None
    if rec.events:
        events = {
            "time": np.asarray(raw["ev_time"], dtype=np.float64),
            "kind": np.asarray(raw["ev_kind"], dtype=np.int64),
            "cls": np.asarray(raw["ev_cls"], dtype=np.int64),
            "job": np.asarray(raw["ev_job"], dtype=np.int64),
        }
    if rec.series:
        series = {
            "time": np.asarray(raw["se_time"], dtype=np.float64),
            "Z": np.asarray(raw["se_cnt"], dtype=np.int64).reshape(-1, G),
            "W": np.asarray(raw["se_W"], dtype=np.float64).reshape(-1, G),
            "Wtotal": np.asarray(raw["se_Wtot"], dtype=np.float64),
        }
    if rec.stations:
        stations = {
            "time": np.asarray(raw["sl_time"], dtype=np.float64),
            "counts": np.asarray(raw["sl_cnt"], dtype=np.int64).reshape(-1, S),
            "W": np.asarray(raw["sl_W"], dtype=np.float64).reshape(-1, G),
            "Wtotal": np.asarray(raw["sl_Wtot"], dtype=np.float64),
        }
    audit = None
    if rec.audit:
        counts, first = state.kernel.audit_report()
        audit = {"counts": dict(zip(AUDIT_NAMES, counts)), "first": first}
    return Trajectory(
        classes=list(state.labels),
        groups=list(state.groups),
        stations=list(state.station_names),
        workload_groups=list(state.spec.workload_groups),
        events=events,
        series=series,
        station_log=stations,
        reason=STOP_REASONS[res["reason"]],
        truncated=truncated,
        t_start=res["t_start"],
        t_end=res["t_end"],
        steps=res["steps"],
        min_count=res["min_count"],
        min_W=res["min_W"],
        audit=audit,
        backend=state.backend,
    )


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------


class SimState:
    """A network in motion: kernel plus the labels needed to read it."""

    def __init__(self, spec: NetworkSpec, seed: int, replication: int = 0, backend: str | None = None):
        self.spec = spec
        self.seed = int(seed)
        self.replication = int(replication)
        self.backend = backend or default_backend()
        if self.backend not in available_backends():
            raise ImportError(f"backend {self.backend!r} unavailable (have {available_backends()})")
        self.labels = spec.labels
        self.groups = spec.groups
        self.station_names = [s.name for s in spec.stations]
        self.tables, self.stream_labels = compile_tables(spec)
        self._gens = []
        for label, kind in self.stream_labels:
            gen = RngStream(self.seed, (self.replication, label)).generator
            self._gens.append((gen, kind))
        impl = _ext.Kernel if self.backend == "cython" else _pykernel.Kernel
        self.kernel = impl(self.tables, self._refill)

    def _refill(self, sid: int) -> np.ndarray:
        gen, kind = self._gens[sid]
        if kind == "u":
            return gen.random(BLOCK)
        return gen.standard_exponential(BLOCK)

    # -- reading ----------------------------------------------------------
    @property
    def clock(self) -> float:
        return self.kernel.clock

    def class_counts(self) -> dict[str, int]:
        return dict(zip(self.labels, self.kernel.state_arrays()["counts"]))

    def counts(self) -> dict[str, int]:
        """Job counts per observable group (stage classes folded into their parent)."""
        return dict(zip(self.groups, self.kernel.state_arrays()["grp_count"]))

    def station_counts(self) -> dict[str, int]:
        return dict(zip(self.station_names, self.kernel.state_arrays()["st_n"]))

    @property
    def total(self) -> int:
        return int(self.kernel.total)

    def counters(self) -> dict[str, dict[str, int]]:
        """Cumulative arrivals ``A``, departures ``D`` and departures of initial jobs ``D_orig`` per class."""
        a = self.kernel.state_arrays()
        return {
            "A": dict(zip(self.labels, a["arrivals"])),
            "D": dict(zip(self.labels, a["departures"])),
            "D_orig": dict(zip(self.labels, a["dorig"])),
            "Z0": dict(zip(self.labels, a["z0"])),
        }

    def jobs(self) -> list[dict]:
        out = []
        for k, jid, stamp, res, svc, init, entry in self.kernel.jobs():
            out.append(
                {
                    "class": self.labels[k],
                    "id": int(jid),
                    "class_arrival": float(stamp),
                    "residual": max(float(res), 0.0),
                    "service": float(svc),
                    "initial": bool(init),
                    "entry_time": float(entry),
                }
            )
        return out

    def allocation(self) -> dict[str, dict[int, float]]:
        """Service rate of each served job, keyed by station then job id."""
        return {name: dict(rows) for name, rows in zip(self.station_names, self.kernel.serving())}

    def source_clocks(self) -> dict[str, float]:
        return {src.entry: u for src, u in zip(self.spec.sources, self.kernel.source_clocks())}

    def exact_workloads(self) -> tuple[dict[str, float], float]:
        """Per-group and total workload summed job by job (no running totals)."""
        t = self.tables
        per = {g: 0.0 for g in self.groups}
        total = 0.0
        for k, _, _, res, _, _, _ in self.kernel.jobs():
            res = max(res, 0.0)
            per[self.groups[t["cls_group"][k]]] += res + t["cls_tail_grp"][k]
            total += res + t["cls_tail_tot"][k]
        return per, total

    def tracked_workloads(self) -> tuple[dict[str, float], float]:
        """Running workload totals maintained by the kernel (valid at event times)."""
        a = self.kernel.state_arrays()
        return dict(zip(self.groups, a["grp_W"])), a["W_tot"]

    def snapshot(self) -> StateSnapshot:
        """State-space point: aged jobs at multi-class stations, counts elsewhere, source clocks."""
        multi = {s.name for s in self.spec.stations if len(self.spec.station_classes(s.name)) > 1}
        now = self.clock
        jobs, counts = [], {}
        for job in self.jobs():
            c = self.spec.cls(job["class"])
            number = self.labels.index(job["class"]) + 1
            if c.station in multi:
                age = math.inf if job["class_arrival"] == -math.inf else now - job["class_arrival"]
                jobs.append((number, age, job["residual"]))
            else:
                counts[job["class"]] = counts.get(job["class"], 0) + 1
        return StateSnapshot(jobs=jobs, counts=counts, clocks=self.source_clocks())

    # -- running ----------------------------------------------------------
    def _mask_classes(self, names: Sequence[str]) -> list[int]:
        out: set[int] = set()
        for name in names:
            if name in self.labels:
                out.add(self.labels.index(name))
            elif name in self.groups:
                out.update(self.labels.index(m) for m in self.spec.group_members(name))
            elif name in self.station_names:
                out.update(self.labels.index(m) for m in self.spec.station_classes(name))
            else:
                raise SpecError(f"stop rule names unknown class, group or station {name!r}")
        return sorted(out)

    def run(self, stop: StopRule, record: Record | None = None) -> Trajectory:
        rec = record or Record()
        if stop.max_events is not None and stop.max_events < 0:
            raise ValueError("max_events must be nonnegative")
        grid = float(rec.grid) if rec.grid else 0.0
        if grid < 0:
            raise ValueError("grid spacing must be positive")
        self.kernel.set_mask(self._mask_classes(stop.until_empty))
        max_events = float(stop.max_events) if stop.max_events is not None else math.inf
        args = (bool(rec.events), bool(rec.series), bool(rec.stations), grid, bool(rec.audit))
        if stop.predicate is None:
            res = self.kernel.run(float(stop.horizon), max_events, bool(stop.until_empty), float(stop.cap), *args)
            raw = self.kernel.records()
        else:
            res, raw = self._run_stepping(stop, max_events, args)
        reason = STOP_REASONS[res["reason"]]
        truncated = reason == "cap" or (stop.has_goal and reason != "predicate")
        return _trajectory(self, rec, res, raw, truncated)

    def _run_stepping(self, stop: StopRule, max_events: float, args):
        """Predicate stop: advance one event at a time and test between events."""
        merged: dict[str, list] = {}
        first = True
        res = None
        steps = 0
        t0 = self.clock
        min_count = self.kernel.total
        min_W = self.kernel.state_arrays()["W_tot"]
        reason = None
        if stop.predicate(self):
            reason = _pykernel.R_PREDICATE
        while reason is None:
            if steps >= max_events:
                reason = _pykernel.R_MAX_EVENTS
                break
            if steps >= stop.cap:
                reason = _pykernel.R_CAP
                break
            res = self.kernel.run(float(stop.horizon), 1.0, bool(stop.until_empty), math.inf, *args)
            raw = self.kernel.records()
            for key, vals in raw.items():
                vals = list(vals)
                if not first and key in ("se_time", "se_cnt", "se_W", "se_Wtot", "sl_time", "sl_cnt", "sl_W", "sl_Wtot"):
                    # each call re-emits the opening row; keep only the first one
                    width = {"se_time": 1, "se_Wtot": 1, "sl_time": 1, "sl_Wtot": 1}.get(key)
                    if width is None:
                        width = len(self.groups) if key in ("se_cnt", "se_W", "sl_W") else len(self.station_names)
                    vals = vals[width:]
                merged.setdefault(key, []).extend(vals)
            first = False
            steps += res["steps"]
            min_count = min(min_count, res["min_count"])
            min_W = min(min_W, res["min_W"])
            if res["reason"] != _pykernel.R_MAX_EVENTS:
                reason = res["reason"]
                break
            if stop.predicate(self):
                reason = _pykernel.R_PREDICATE
        if first:
            self.kernel.run(self.clock, 0.0, False, 0.0, *args)
            merged = {k: list(v) for k, v in self.kernel.records().items()}
        out = {"reason": reason, "steps": steps, "t_start": t0, "t_end": self.clock,
               "min_count": min_count, "min_W": min_W}
        return out, merged


def init_state(spec: NetworkSpec, init: InitialCondition | None = None, seed: int = 0,
               replication: int = 0, backend: str | None = None) -> SimState:
    """Materialize initial jobs (creation order: class order, then index) and start the clocks."""
    init = init or InitialCondition()
    init.validate(spec)
    state = SimState(spec, seed, replication, backend)
    for label in spec.labels:
        n = int(init.counts.get(label, 0))
        res = list(init.residuals.get(label, ()))
        k = spec.index(label)
        for i in range(n):
            r = float(res[i]) if i < len(res) else -1.0
            state.kernel.add_job(k, r, True)
    clocks = [float(init.clocks.get(src.entry, -1.0)) for src in spec.sources]
    state.kernel.start(clocks)
    return state


def run(state: SimState, stop: StopRule, record: Record | None = None) -> Trajectory:
    return state.run(stop, record)


# ---------------------------------------------------------------------------
# Coupling
# ---------------------------------------------------------------------------


@dataclass
class Discrepancy:
    count: int
    workload: float
    time: float
    rows_a: int
    rows_b: int
    compared: int
    first_divergence: int | None
    trailing_ignored: int

    @property
    def ok(self) -> bool:
        return self.count == 0


def compare_station_logs(a: Trajectory, b: Trajectory, horizon: float, time_tol: float = 1e-9) -> Discrepancy:
    """Row-by-row comparison of two station-level logs.

    Rows past the shorter log are tolerated only when they fall within
    ``time_tol`` of the horizon (an event landing on either side of the cut
    because of rounding in its time stamp).
    """
    la, lb = a.station_log, b.station_log
    n = min(len(la["time"]), len(lb["time"]))
    shared = [g for g in a.groups if g in b.groups]
    ia = [a.groups.index(g) for g in shared]
    ib = [b.groups.index(g) for g in shared]
    count = 0
    first = None
    work = 0.0
    tdiff = 0.0
    if n:
        diff = np.abs(la["counts"][:n] - lb["counts"][:n]).max(axis=1)
        count = int(diff.max())
        bad = np.flatnonzero(diff)
        first = int(bad[0]) if bad.size else None
        if ia:
            work = float(np.abs(la["W"][:n, ia] - lb["W"][:n, ib]).max())
        work = max(work, float(np.abs(la["Wtotal"][:n] - lb["Wtotal"][:n]).max()))
        tdiff = float(np.abs(la["time"][:n] - lb["time"][:n]).max())
    extra = la if len(la["time"]) > n else lb
    trailing = len(extra["time"]) - n
    if trailing:
        late = extra["time"][n:]
        if np.any(late < horizon - time_tol) or trailing > 1:
            count = max(count, 1)
            if first is None:
                first = n
    return Discrepancy(count, work, tdiff, len(la["time"]), len(lb["time"]), n, first, trailing)


def coupled_run(spec_a: NetworkSpec, spec_b: NetworkSpec, seed: int, horizon: float | None = None,
                max_events: int | None = None, init: InitialCondition | None = None, replication: int = 0,
                backend: str | None = None) -> tuple[Trajectory, Trajectory, Discrepancy]:
    """Drive two networks with the same primitives and compare them station by station.

    ``spec_b`` is meant to be a stage expansion of ``spec_a``.  With
    ``max_events`` the first network runs for that many events and its end
    time becomes the horizon for both.
    """
    if horizon is None and max_events is None:
        raise ValueError("coupled_run needs a horizon or an event budget")
    rec = Record(stations=True)
    sa = init_state(spec_a, init, seed, replication, backend)
    if horizon is None:
        ta = sa.run(StopRule(max_events=max_events), rec)
        horizon = ta.t_end
    else:
        ta = sa.run(StopRule(horizon=horizon, max_events=max_events), rec)
    sb = init_state(spec_b, init, seed, replication, backend)
    tb = sb.run(StopRule(horizon=horizon), rec)
    return ta, tb, compare_station_logs(ta, tb, horizon)
