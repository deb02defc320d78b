"""Quantities read off trajectories and states.

Every function here is pure: it takes a finished Trajectory (or a live
SimState for workloads) and returns plain values.  Stage classes always
report under their parent group, so fig2 runs read like fig1 runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import SimState, Trajectory


# ---------------------------------------------------------------------------
# Workloads
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Workloads:
    W3: float
    W6: float
    Wtotal: float


def workloads(source, index: int | None = None) -> Workloads:
    """Immediate workloads at groups 3 and 6 and the total workload.

    ``source`` is a SimState (exact job-by-job sums) or a Trajectory with a
    series, read at row ``index`` (default: last row).
    """
    if isinstance(source, SimState):
        per, total = source.exact_workloads()
        return Workloads(per.get("3", 0.0), per.get("6", 0.0), total)
    if isinstance(source, Trajectory):
        if source.series is None:
            raise ValueError("trajectory has no series; record with Record(series=True)")
        i = -1 if index is None else index
        W = source.series["W"][i]
        g = source.groups
        w3 = float(W[g.index("3")]) if "3" in g else 0.0
        w6 = float(W[g.index("6")]) if "6" in g else 0.0
        return Workloads(w3, w6, float(source.series["Wtotal"][i]))
    raise TypeError(f"cannot read workloads from {type(source).__name__}")


# ---------------------------------------------------------------------------
# Clusters
# ---------------------------------------------------------------------------


@dataclass
class Cluster:
    start: float
    size: int
    arrivals: np.ndarray = field(repr=False)


def detect_clusters(arrivals, threshold: float) -> list[Cluster]:
    """Split sorted arrival times into clusters.

    A gap of at least ``threshold`` closes the current cluster; the first
    arrival opens the first one.
    """
    a = np.asarray(arrivals, dtype=float)
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if a.size == 0:
        return []
    if np.any(np.diff(a) < 0):
        raise ValueError("arrival times must be sorted ascending")
    cuts = np.flatnonzero(np.diff(a) >= threshold) + 1
    return [Cluster(float(part[0]), int(part.size), part) for part in np.split(a, cuts)]


def clusters_in_window(clusters: list[Cluster], t0: float) -> int:
    """Number of clusters with at least one arrival in ``(0, t0]``."""
    return sum(1 for c in clusters if c.start <= t0 and c.arrivals[-1] > 0)


def cluster_bound(t0: float, M: float) -> int:
    return math.ceil(2 * t0 / M)


# ---------------------------------------------------------------------------
# Stopping times
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mark:
    """A located stopping time; ``flag`` explains a degenerate or missing one."""

    time: float
    index: int
    flag: str | None = None

    @property
    def found(self) -> bool:
        return self.flag is None or self.flag == "degenerate"


def _series(traj: Trajectory) -> dict:
    if traj.series is None:
        raise ValueError("trajectory has no series; record with Record(series=True)")
    return traj.series


def _group_sum(traj: Trajectory, groups) -> np.ndarray:
    s = _series(traj)
    cols = [traj.groups.index(g) for g in groups]
    return s["Z"][:, cols].sum(axis=1)


def find_S1(traj: Trajectory, head: str = "2") -> Mark:
    """First time the head class is empty."""
    z = _group_sum(traj, [head])
    times = _series(traj)["time"]
    if z[0] == 0:
        return Mark(float(times[0]), 0, "degenerate")
    hit = np.flatnonzero(z == 0)
    if hit.size == 0:
        return Mark(math.nan, -1, "not reached")
    return Mark(float(times[hit[0]]), int(hit[0]))


def find_T(traj: Trajectory, S1: float, station: tuple[str, ...] = ("3", "4")) -> Mark:
    """First time at or after ``S1`` with the given classes jointly empty."""
    if not math.isfinite(S1):
        return Mark(math.nan, -1, "S1 missing")
    times = _series(traj)["time"]
    z = _group_sum(traj, station)
    ok = np.flatnonzero((times >= S1) & (z == 0))
    if ok.size == 0:
        return Mark(math.nan, -1, "not reached")
    return Mark(float(times[ok[0]]), int(ok[0]))


# ---------------------------------------------------------------------------
# Cycle marks
# ---------------------------------------------------------------------------

# Roles of the classes in one cycle; the mirrored cycle swaps 1-3 with 4-6.
ROLES = {
    False: {"head": "2", "drained": ("3", "4"), "grow": "5", "front": ("1", "2"), "tail": "6", "loaded": "3"},
    True: {"head": "5", "drained": ("6", "1"), "grow": "2", "front": ("4", "5"), "tail": "3", "loaded": "6"},
}
EVENT_NAMES = ("grow", "front_small", "drained", "tail_small", "min_count", "T_window")


@dataclass
class CycleMarks:
    """Measured values at the marks of one cycle, with the cycle's own N.

    In a mirrored cycle "grow" is class 2 instead of 5 and so on (see ROLES).
    Times are relative to the cycle start.
    """

    N: int
    delta: float
    mirrored: bool
    S1: float
    T: float
    Z_S1: dict
    W_loaded_S1: float
    Z_T: dict
    W_tail_T: float
    min_Z: int
    min_W: float = math.nan
    flags: tuple = ()

    @property
    def S2(self) -> float:
        return self.T - self.S1

    @property
    def complete(self) -> bool:
        return not self.flags

    @property
    def head_end(self) -> int:
        return int(self.Z_T[ROLES[self.mirrored]["grow"]])

    @property
    def front_end(self) -> int:
        return int(sum(self.Z_T[k] for k in ROLES[self.mirrored]["front"]))

    @property
    def empirical_a(self) -> float:
        """max(W_loaded(S1), jobs outside the drained station at S1) / (delta^3 N')."""
        r = ROLES[self.mirrored]
        n_prime = self.Z_S1[r["drained"][1]]
        others = sum(v for k, v in self.Z_S1.items() if k not in r["drained"])
        denom = self.delta**3 * n_prime
        return max(self.W_loaded_S1, others) / denom if denom > 0 else math.inf

    def events(self) -> dict[str, bool] | None:
        """Booleans for each event of the induction step, or None if incomplete."""
        if not self.complete:
            return None
        r = ROLES[self.mirrored]
        N, d = self.N, self.delta
        return {
            "grow": self.head_end >= N / (4 * d),
            "front_small": self.front_end <= 1e3 * d * N,
            "drained": all(self.Z_T[k] == 0 for k in r["drained"]),
            "tail_small": self.W_tail_T <= d**3 * N,
            "min_count": self.min_Z >= N / 4,
            "T_window": N / (3 * d) <= self.T <= 3 * N / d,
        }

    def bitmask(self) -> int:
        ev = self.events()
        if ev is None:
            return -1
        return sum(1 << i for i, name in enumerate(EVENT_NAMES) if ev[name])


def cycle_report(traj: Trajectory, N: int, delta: float, mirrored: bool = False) -> CycleMarks:
    """Locate S1 and T on a recorded series and evaluate the cycle marks."""
    r = ROLES[mirrored]
    s = _series(traj)
    t0 = float(s["time"][0])
    s1 = find_S1(traj, r["head"])
    flags = []
    if not s1.found:
        flags.append("S1 " + s1.flag)
        T = Mark(math.nan, -1, "S1 missing")
    else:
        T = find_T(traj, s1.time, r["drained"])
        if not T.found:
            flags.append("T " + T.flag)
    g = traj.groups

    def counts(i):
        return {k: int(s["Z"][i, g.index(k)]) for k in g} if i >= 0 else {}

    i1, iT = s1.index, T.index
    z_s1 = counts(i1)
    z_t = counts(iT)
    w_loaded = float(s["W"][i1, g.index(r["loaded"])]) if i1 >= 0 else math.nan
    w_tail = float(s["W"][iT, g.index(r["tail"])]) if iT >= 0 else math.nan
    stop = iT + 1 if iT >= 0 else len(s["time"])
    total = s["Z"][:stop].sum(axis=1)
    return CycleMarks(
        N=N,
        delta=delta,
        mirrored=mirrored,
        S1=s1.time - t0 if s1.found else math.nan,
        T=T.time - t0 if T.found else math.nan,
        Z_S1=z_s1,
        W_loaded_S1=w_loaded,
        Z_T=z_t,
        W_tail_T=w_tail,
        min_Z=int(total.min()),
        min_W=float(s["Wtotal"][:stop].min()),
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Idle time between clusters
# ---------------------------------------------------------------------------


@dataclass
class ClusterGapIdle:
    cut: np.ndarray
    end: np.ndarray
    idle: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.end - self.cut


def cluster_gap_idle(traj: Trajectory, clusters: list[Cluster], M: float, loaded: str = "3") -> ClusterGapIdle:
    """Time in each gap during which the loaded class holds no job that arrived after the gap opened.

    Gap ``i`` runs from ``U_i + L_i / M**2`` to the next cluster start.  Needs
    the event log of the run.
    """
    if traj.events is None:
        raise ValueError("trajectory has no event log; record with Record(events=True)")
    ev = traj.events
    k = traj.classes.index(loaded)
    at_k = ev["cls"] == k
    arr = at_k & (ev["kind"] == 0)
    dep = at_k & (ev["kind"] == 1)
    arr_t, arr_j = ev["time"][arr], ev["job"][arr]
    dep_t, dep_j = ev["time"][dep], ev["job"][dep]
    cuts, ends, idles = [], [], []
    for a, b in zip(clusters[:-1], clusters[1:]):
        cut = a.start + a.size / M**2
        end = b.start
        # jobs arriving to the loaded class after the cut, and when they leave
        sel = (arr_t > cut) & (arr_t <= end)
        changes = [(t, +1) for t in arr_t[sel]]
        fresh = set(arr_j[sel].tolist())
        dsel = (dep_t > cut) & (dep_t <= end)
        changes += [(t, -1) for t, j in zip(dep_t[dsel], dep_j[dsel]) if int(j) in fresh]
        changes.sort(key=lambda x: (x[0], -x[1]))
        idle = 0.0
        level = 0
        last = cut
        for t, step in changes:
            if level == 0:
                idle += t - last
            level += step
            last = t
        if level == 0:
            idle += end - last
        cuts.append(cut)
        ends.append(end)
        idles.append(idle)
    return ClusterGapIdle(np.array(cuts), np.array(ends), np.array(idles))
