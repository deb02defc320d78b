"""Experiment drivers: induction step, multi-cycle growth, lemma verifiers.

Replications are independent: replication ``r`` of an experiment with seed
``s`` draws every primitive from ``RngStream(s, (r, label))``, so results do
not depend on ``jobs`` or on the order in which workers finish.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .engine import EVENT_CAP, InitialCondition, Record, StopRule, coupled_run, init_state
from .model import (
    Discipline,
    NetworkSpec,
    build_fig1,
    build_fig2,
    exponentialize,
    stage_count,
    with_discipline,
)
from .observables import EVENT_NAMES, ROLES, CycleMarks
from .stochastics import Exponential, NuLaw, RngStream, law_mean, sample_interarrivals, sample_service

DEFAULT_PRESET = (2000.0, 0.1, 40000)

# Candidates tried by the scan after the default preset, cheapest first.
SCAN_GRID = tuple(
    (M, d, math.ceil(2 * M / d)) for M in (2000.0, 5000.0, 10000.0) for d in (0.2, 0.15, 0.1)
    if (M, d) != DEFAULT_PRESET[:2]
)


# ---------------------------------------------------------------------------
# Statistics helpers
# ---------------------------------------------------------------------------


def wilson(k, n, conf: float = 0.95):
    """Wilson score interval for ``k`` successes in ``n`` trials (vectorized)."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    z = stats.norm.ppf(0.5 + conf / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(n > 0, k / n, np.nan)
        denom = 1 + z**2 / n
        centre = (p + z**2 / (2 * n)) / denom
        half = z * np.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    lo = np.clip(centre - half, 0.0, 1.0)
    hi = np.clip(centre + half, 0.0, 1.0)
    # keep the point estimate inside the band despite rounding
    return np.minimum(lo, p), np.maximum(hi, p)


@dataclass
class TailEstimate:
    """Empirical tail P(quantity >= x) on a grid, with Wilson bands and a log-linear fit."""

    x: np.ndarray
    p: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n: int
    conf: float
    slope: float = math.nan
    slope_se: float = math.nan
    slope_df: int = 0

    @classmethod
    def from_hits(cls, x, hits, n: int, conf: float = 0.95, fit_min_hits: int = 5) -> "TailEstimate":
        x = np.asarray(x, dtype=float)
        hits = np.asarray(hits, dtype=float)
        p = hits / n
        lo, hi = wilson(hits, n, conf)
        est = cls(x, p, lo, hi, n, conf)
        use = hits >= fit_min_hits
        if use.sum() >= 3 and np.ptp(x[use]) > 0:
            fit = stats.linregress(x[use], np.log(p[use]))
            est.slope, est.slope_se, est.slope_df = float(fit.slope), float(fit.stderr), int(use.sum() - 2)
        return est

    @classmethod
    def from_samples(cls, samples, x, conf: float = 0.95, fit_min_hits: int = 5) -> "TailEstimate":
        s = np.sort(np.asarray(samples, dtype=float))
        x = np.asarray(x, dtype=float)
        hits = s.size - np.searchsorted(s, x, side="left")
        return cls.from_hits(x, hits, s.size, conf, fit_min_hits)

    def slope_upper(self, conf: float = 0.99) -> float:
        """One-sided upper confidence bound on the fitted log-slope."""
        if self.slope_df < 1:
            return math.nan
        return self.slope + stats.t.ppf(conf, self.slope_df) * self.slope_se

    def nonincreasing(self) -> bool:
        """Nonincreasing up to band overlap: each step down or overlapping the previous band."""
        return bool(all(self.p[i + 1] <= self.p[i] or self.lo[i + 1] <= self.hi[i] for i in range(len(self.p) - 1)))

    def rows(self) -> list[dict]:
        return [
            {"x": float(a), "p": float(b), "lo": float(c), "hi": float(d), "n": self.n}
            for a, b, c, d in zip(self.x, self.p, self.lo, self.hi)
        ]


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


# ---------------------------------------------------------------------------
# Induction step and cycles
# ---------------------------------------------------------------------------


@dataclass
class InductionConfig:
    M: float
    delta: float
    N: int
    replications: int = 20
    seed: int = 0
    cap: int = EVENT_CAP
    jobs: int = 1
    backend: str | None = None
    mirrored_start: bool = False

    def __post_init__(self):
        if int(self.N) != self.N or self.N <= 0:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        self.N = int(self.N)
        build_fig1(self.M, self.delta)  # raises on an invalid network
        if self.N < 2 * self.M / self.delta:
            warnings.warn(
                f"N={self.N} is below 2M/delta={2 * self.M / self.delta:g}; the induction step assumes N >= 2M/delta",
                stacklevel=2,
            )

    @property
    def preset(self) -> dict:
        return {"M": self.M, "delta": self.delta, "N": self.N}


def _run_cycle(state, N: int, delta: float, mirrored: bool, cap: int) -> CycleMarks:
    """One cycle on a live state: drain the head class, then the opposite station."""
    r = ROLES[mirrored]
    t0 = state.clock
    a = state.run(StopRule(until_empty=[r["head"]], cap=cap))
    z_s1 = state.counts()
    w_loaded = state.exact_workloads()[0][r["loaded"]]
    flags = []
    if a.truncated:
        flags.append("S1 not reached")
        return CycleMarks(N, delta, mirrored, math.nan, math.nan, z_s1, w_loaded, {}, math.nan,
                          a.min_count, a.min_W, tuple(flags))
    s1 = state.clock - t0
    b = state.run(StopRule(until_empty=list(r["drained"]), cap=cap))
    if b.truncated:
        flags.append("T not reached")
    z_t = state.counts()
    w_tail = state.exact_workloads()[0][r["tail"]]
    return CycleMarks(
        N=N,
        delta=delta,
        mirrored=mirrored,
        S1=s1,
        T=state.clock - t0 if not b.truncated else math.nan,
        Z_S1=z_s1,
        W_loaded_S1=w_loaded,
        Z_T=z_t,
        W_tail_T=w_tail,
        min_Z=min(a.min_count, b.min_count),
        min_W=min(a.min_W, b.min_W),
        flags=tuple(flags),
    )


def _cycles_task(task) -> dict:
    M, delta, N, seed, rep, cycles, mirrored_start, cap, backend, grid = task
    spec = build_fig1(M, delta)
    head = ROLES[mirrored_start]["head"]
    state = init_state(spec, InitialCondition({head: N}), seed=seed, replication=rep, backend=backend)
    W0 = state.exact_workloads()[1]
    marks = []
    ends = []
    n_cur = N
    mirrored = mirrored_start
    series = None
    for _ in range(cycles):
        cm = _run_cycle(state, n_cur, delta, mirrored, cap)
        marks.append(cm)
        ends.append(state.clock)
        if not cm.complete:
            break
        n_cur = cm.head_end
        mirrored = not mirrored
        if n_cur == 0:
            break
    if grid:
        # re-run the same path on a time grid for plotting
        replay = init_state(spec, InitialCondition({head: N}), seed=seed, replication=rep, backend=backend)
        tr = replay.run(StopRule(horizon=ends[-1], cap=cap), Record(series=True, grid=grid))
        series = {"time": tr.series["time"], "Z": tr.series["Z"], "Wtotal": tr.series["Wtotal"], "groups": tr.groups}
    return {"rep": rep, "marks": marks, "ends": ends, "W0": W0, "series": series}


@dataclass
class InductionResult:
    config: InductionConfig
    marks: list[CycleMarks]

    @property
    def complete(self) -> list[CycleMarks]:
        return [m for m in self.marks if m.complete]

    @property
    def truncated(self) -> int:
        return len(self.marks) - len(self.complete)

    def frequencies(self) -> dict[str, dict]:
        """Per-event success counts over complete replications, with Wilson intervals."""
        done = self.complete
        n = len(done)
        N, d = self.config.N, self.config.delta
        table = {}
        evs = [m.events() for m in done]
        extra = {
            "all": [all(e.values()) for e in evs],
            "S1_window": [N / (2 * d) <= m.S1 <= 2 * N / d for m in done],
            "S2_bound_a63": [m.S2 <= 4 * 63 * d**2 * m.Z_S1[ROLES[m.mirrored]["drained"][1]] for m in done],
            "S2_bound_empirical_a": [
                m.S2 <= 4 * m.empirical_a * d**2 * m.Z_S1[ROLES[m.mirrored]["drained"][1]] for m in done
            ],
        }
        cols = {name: [e[name] for e in evs] for name in EVENT_NAMES}
        cols.update(extra)
        for name, vals in cols.items():
            k = int(sum(vals))
            lo, hi = wilson(k, n) if n else (math.nan, math.nan)
            table[name] = {"hits": k, "n": n, "freq": k / n if n else math.nan, "lo": float(lo), "hi": float(hi)}
        return table


def exp_induction(cfg: InductionConfig) -> InductionResult:
    """One induction cycle per replication from Z2(0)=N (or Z5(0)=N when mirrored)."""
    tasks = [
        (cfg.M, cfg.delta, cfg.N, cfg.seed, r, 1, cfg.mirrored_start, cfg.cap, cfg.backend, None)
        for r in range(cfg.replications)
    ]
    out = _map(_cycles_task, tasks, cfg.jobs)
    return InductionResult(cfg, [o["marks"][0] for o in out])


@dataclass
class GrowthReport:
    """Per-replication cycle table: end time, head count, growth ratio, min Z and min W per cycle.

    Arrays are shaped ``(replications, cycles)``; cycles that did not run are NaN.
    """

    config: InductionConfig
    cycles: int
    T: np.ndarray
    head: np.ndarray
    min_Z: np.ndarray
    min_W: np.ndarray
    marks: list[list[CycleMarks]]
    W0: np.ndarray
    series: dict | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        prev = np.concatenate([np.full((self.head.shape[0], 1), float(self.config.N)), self.head[:, :-1]], axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.head / prev

    def median_heads(self) -> np.ndarray:
        return np.nanmedian(self.head, axis=0) if self.head.size else np.array([])

    def median_ratios(self) -> np.ndarray:
        return np.nanmedian(self.ratios, axis=0) if self.head.size else np.array([])

    @property
    def run_min_Z(self) -> np.ndarray:
        """Lowest total count over the whole run (all cycles) per replication."""
        with np.errstate(invalid="ignore"):
            return np.nanmin(self.min_Z, axis=1)

    def growth_ok(self, threshold: float = 1.5) -> bool:
        """Median ratio of every cycle at least ``threshold`` and median heads strictly increasing."""
        if np.isnan(self.head).any():
            return False
        r = self.median_ratios()
        h = self.median_heads()
        return bool(np.all(r >= threshold) and np.all(np.diff(h) > 0))

    def min_count_ok(self) -> bool:
        """Z(t) >= N/4 over the whole run in a strict majority of replications."""
        good = np.sum(self.run_min_Z >= self.config.N / 4)
        return bool(good > self.head.shape[0] / 2)

    @property
    def passed(self) -> bool:
        return self.growth_ok() and self.min_count_ok()

    def event_frequencies(self) -> list[dict]:
        """Per cycle, the fraction of replications where each induction event held."""
        out = []
        for c in range(self.cycles):
            ms = [row[c] for row in self.marks if len(row) > c and row[c].complete]
            entry = {"cycle": c + 1, "n": len(ms)}
            for name in EVENT_NAMES:
                entry[name] = float(np.mean([m.events()[name] for m in ms])) if ms else math.nan
            out.append(entry)
        return out

    def workload_increasing(self) -> np.ndarray:
        """Per replication: min W strictly increases from cycle to cycle."""
        with np.errstate(invalid="ignore"):
            d = np.diff(self.min_W, axis=1)
        return np.all(d > 0, axis=1) & ~np.isnan(self.min_W).any(axis=1)

    def workload_dips(self) -> np.ndarray:
        """Per replication and cycle: did W fall to N_cycle/6 or below?"""
        Ns = np.concatenate([np.full((self.head.shape[0], 1), float(self.config.N)), self.head[:, :-1]], axis=1)
        with np.errstate(invalid="ignore"):
            return self.min_W <= Ns / 6


def exp_instability(cfg: InductionConfig, cycles: int = 3, grid: float | None = None) -> GrowthReport:
    """Same-path cycles with swapped roles after each one; N is re-read as the head count."""
    if cycles < 2:
        raise ValueError("instability needs at least 2 cycles")
    tasks = [
        (cfg.M, cfg.delta, cfg.N, cfg.seed, r, cycles, cfg.mirrored_start, cfg.cap, cfg.backend,
         grid if r == 0 else None)
        for r in range(cfg.replications)
    ]
    out = _map(_cycles_task, tasks, cfg.jobs)
    R = len(out)
    T = np.full((R, cycles), np.nan)
    head = np.full((R, cycles), np.nan)
    mz = np.full((R, cycles), np.nan)
    mw = np.full((R, cycles), np.nan)
    flags = []
    for i, o in enumerate(out):
        for c, m in enumerate(o["marks"]):
            mz[i, c] = m.min_Z
            mw[i, c] = m.min_W
            if m.complete:
                T[i, c] = o["ends"][c]
                head[i, c] = m.head_end
            else:
                flags.append(f"replication {i} cycle {c + 1}: {', '.join(m.flags)}")
        if len(o["marks"]) < cycles and o["marks"][-1].complete:
            flags.append(f"replication {i}: head class empty after cycle {len(o['marks'])}")
    return GrowthReport(cfg, cycles, T, head, mz, mw, [o["marks"] for o in out],
                        np.array([o["W0"] for o in out]), out[0]["series"], flags)


@dataclass
class ScanResult:
    chosen: dict | None
    tried: list[dict]
    report: GrowthReport | None


def scan_instability(replications: int = 20, cycles: int = 3, seed: int = 0, jobs: int = 1,
                     candidates=None, backend: str | None = None, cap: int = EVENT_CAP,
                     progress=None) -> ScanResult:
    """Try the default preset, then the scan grid, until one passes both growth checks."""
    cands = list(candidates) if candidates is not None else [DEFAULT_PRESET, *SCAN_GRID]
    tried = []
    for M, d, N in cands:
        cfg = InductionConfig(M, d, N, replications, seed, cap=cap, jobs=jobs, backend=backend)
        rep = exp_instability(cfg, cycles)
        row = {
            "M": M, "delta": d, "N": N,
            "median_heads": rep.median_heads().tolist(),
            "median_ratios": rep.median_ratios().tolist(),
            "growth_ok": rep.growth_ok(),
            "min_count_ok": rep.min_count_ok(),
            "passed": rep.passed,
        }
        tried.append(row)
        if progress:
            progress(row)
        if rep.passed:
            return ScanResult({"M": M, "delta": d, "N": N}, tried, rep)
    return ScanResult(None, tried, None)


# ---------------------------------------------------------------------------
# Lemma verifiers
# ---------------------------------------------------------------------------


@dataclass
class DriftResult:
    eta: float
    reps: int
    horizon: float
    idle: np.ndarray
    busy_tail: TailEstimate
    excursion: TailEstimate


def exp_drift_lemma(eta: float, t0_grid, x_grid, reps: int = 10_000, seed: int = 0,
                    horizon: float | None = None, conf: float = 0.95) -> DriftResult:
    """Unit jobs arriving at Poisson rate 1+eta to a unit-rate server, from W_0 = 0.

    Measures the total idle time |B| and, for each t0, whether W_t >= 2 eta t
    at some t >= t0.  Paths are cut at ``horizon`` (default: late enough that
    a return to zero has probability below 1e-12 under the drift).
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    t0_grid = np.asarray(t0_grid, dtype=float)
    if horizon is None:
        horizon = max(float(t0_grid.max()) * 4, 60.0 / eta**2)
    rng = RngStream(seed, ("drift", 0)).generator
    lam = 1.0 + eta
    n = int(lam * horizon + 10 * math.sqrt(lam * horizon) + 10)
    idle = np.zeros(reps)
    hit = np.zeros((reps, t0_grid.size), dtype=bool)
    chunk = max(1, min(reps, 2_000_000 // n))
    for start in range(0, reps, chunk):
        m = min(chunk, reps - start)
        gaps = rng.standard_exponential((m, n)) / lam
        t = np.cumsum(gaps, axis=1)
        w = np.zeros(m)  # workload just after the previous arrival
        t_prev = np.zeros(m)
        I = np.zeros(m)
        H = np.zeros((m, t0_grid.size), dtype=bool)
        for j in range(n):
            tj = t[:, j]
            live = tj <= horizon
            gap = tj - t_prev
            # workload at each t0 that falls in (t_prev, tj]
            inside = (t0_grid[None, :] > t_prev[:, None]) & (t0_grid[None, :] <= tj[:, None]) & live[:, None]
            w_t0 = np.maximum(w[:, None] - (t0_grid[None, :] - t_prev[:, None]), 0.0)
            H |= inside & (w_t0 >= 2 * eta * t0_grid[None, :])
            I += np.where(live, np.maximum(gap - w, 0.0), 0.0)
            w = np.where(live, np.maximum(w - gap, 0.0) + 1.0, w)
            # after the jump, the excursion check for every t0 already passed
            H |= (live & (w >= 2 * eta * tj))[:, None] & (tj[:, None] >= t0_grid[None, :])
            t_prev = np.where(live, tj, t_prev)
        # idle time between the last arrival and the horizon
        I += np.maximum(horizon - t_prev - w, 0.0)
        idle[start:start + m] = I
        hit[start:start + m] = H
    busy = TailEstimate.from_samples(idle, x_grid, conf)
    exc = TailEstimate.from_hits(t0_grid, hit.sum(axis=0), reps, conf)
    return DriftResult(eta, reps, horizon, idle, busy, exc)


def _renewal_counts(law, t_grid: np.ndarray, stream: RngStream) -> np.ndarray:
    """Counts N_t = max{n : S_n <= t} of one renewal path at every grid time."""
    t_max = float(t_grid.max())
    mu = law_mean(law)
    block = int(2 * t_max / mu) + 64
    total = 0.0
    parts = []
    while total <= t_max:
        if isinstance(law, NuLaw):
            g = sample_interarrivals(law.params, stream, block)
        elif isinstance(law, Exponential):
            g = law.mean * stream.standard_exponential(block)
        else:
            g = np.array([sample_service(law, stream) for _ in range(block)])
        s = total + np.cumsum(g)
        parts.append(s)
        total = float(s[-1])
    S = np.concatenate(parts)
    return np.searchsorted(S, t_grid, side="right")


def exp_counting_ld(law, beta: float, t_grid, reps: int = 2000, seed: int = 0, conf: float = 0.95) -> TailEstimate:
    """Empirical P(|N_t - t/mu| / t >= beta) across the t grid."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    t_grid = np.asarray(t_grid, dtype=float)
    mu = law_mean(law)
    hits = np.zeros(t_grid.size, dtype=np.int64)
    for r in range(reps):
        n = _renewal_counts(law, t_grid, RngStream(seed, ("renewal", r)))
        hits += np.abs(n - t_grid / mu) / t_grid >= beta
    return TailEstimate.from_hits(t_grid, hits, reps, conf)


def renewal_rate(law, t: float, reps: int = 200, seed: int = 0) -> tuple[float, float]:
    """Mean and standard error of N_t / t over independent paths."""
    grid = np.array([float(t)])
    vals = np.array([_renewal_counts(law, grid, RngStream(seed, ("renewal", r)))[0] / t for r in range(reps)])
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(reps))


# ---------------------------------------------------------------------------
# PS versus HLPPS
# ---------------------------------------------------------------------------


def ks_critical(n: int, m: int, alpha: float) -> float:
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    return math.sqrt(-math.log(alpha / 2) / 2) * math.sqrt((n + m) / (n * m))


@dataclass
class KSReport:
    classes: list[str]
    statistics: np.ndarray  # (experiments, classes)
    critical: float
    alpha: float
    reps: int

    @property
    def passed(self) -> np.ndarray:
        """Per experiment: every class statistic below the critical value."""
        return np.all(self.statistics < self.critical, axis=1)

    @property
    def pass_fraction(self) -> float:
        return float(self.passed.mean())


def _snapshot_task(task):
    spec, init, t, seed, reps, offset, backend = task
    out = []
    for r in range(reps):
        st = init_state(spec, init, seed=seed, replication=offset + r, backend=backend)
        st.run(StopRule(horizon=t))
        out.append(list(st.counts().values()))
    return out


def check_exponential(spec: NetworkSpec):
    bad = [c.label for c in spec.classes if not isinstance(c.service, Exponential)]
    if bad:
        raise ValueError(f"PS/HLPPS equality in law needs exponential service; classes {bad} are not")


def exp_ps_hlpps(spec: NetworkSpec, t: float, reps: int = 1000, experiments: int = 1, seed: int = 0,
                 alpha: float = 0.01, init: InitialCondition | None = None, jobs: int = 1,
                 backend: str | None = None) -> KSReport:
    """Compare Z(t) under PS and HLPPS with per-class two-sample KS tests.

    Replication keys are disjoint across disciplines and experiments, so the
    two samples are independent.
    """
    check_exponential(spec)
    ps = with_discipline(spec, Discipline.PS)
    hl = with_discipline(spec, Discipline.HLPPS)
    groups = ps.groups
    per = max(1, reps // max(1, jobs))
    tasks = []
    for e in range(experiments):
        for d, net in enumerate((ps, hl)):
            base = (2 * e + d) * reps
            for s in range(0, reps, per):
                tasks.append((net, init, float(t), seed, min(per, reps - s), base + s, backend))
    out = _map(_snapshot_task, tasks, jobs)
    rows = []
    i = 0
    per_disc = math.ceil(reps / per)
    for e in range(experiments):
        samples = []
        for d in range(2):
            chunk = []
            for _ in range(per_disc):
                chunk.extend(out[i])
                i += 1
            samples.append(np.asarray(chunk))
        rows.append([stats.ks_2samp(samples[0][:, k], samples[1][:, k], method="asymp").statistic
                     for k in range(len(groups))])
    return KSReport(list(groups), np.asarray(rows), ks_critical(reps, reps, alpha), alpha, reps)


def fig1_exponential(M: float = 10.0, delta: float = 0.2) -> NetworkSpec:
    return exponentialize(build_fig1(M, delta))


# ---------------------------------------------------------------------------
# Stage coupling
# ---------------------------------------------------------------------------


@dataclass
class CouplingReport:
    seed: int
    M: float
    delta: float
    L: int
    events: int
    events_b: int
    count: int
    workload: float
    first_divergence: int | None
    divergence_row: dict | None

    @property
    def ok(self) -> bool:
        return self.count == 0


def exp_stage_coupling(M: float, delta: float, seed: int, horizon: float | None = None,
                       max_events: int | None = None, backend: str | None = None) -> CouplingReport:
    """fig1 against its stage expansion (fig2) on common primitives."""
    L = stage_count(delta)
    a, b = build_fig1(M, delta), build_fig2(M, delta)
    if (horizon is not None and horizon <= 0) or max_events == 0:
        return CouplingReport(seed, M, delta, L, 0, 0, 0, 0.0, None, None)
    ta, tb, disc = coupled_run(a, b, seed, horizon=horizon, max_events=max_events, backend=backend)
    row = None
    if disc.first_divergence is not None:
        i = disc.first_divergence
        la, lb = ta.station_log, tb.station_log
        row = {"row": i}
        if i < len(la["time"]):
            row["fig1"] = {"time": float(la["time"][i]), "counts": la["counts"][i].tolist()}
        if i < len(lb["time"]):
            row["fig2"] = {"time": float(lb["time"][i]), "counts": lb["counts"][i].tolist()}
    return CouplingReport(seed, M, delta, L, ta.steps, tb.steps, disc.count, disc.workload,
                          disc.first_divergence, row)


# ---------------------------------------------------------------------------
# Workload growth
# ---------------------------------------------------------------------------


@dataclass
class WorkloadGrowth:
    report: GrowthReport

    @property
    def min_W(self) -> np.ndarray:
        return self.report.min_W

    def increasing_fraction(self) -> float:
        return float(self.report.workload_increasing().mean())

    def dip_frequency(self) -> np.ndarray:
        """Per cycle: fraction of replications where W fell to N_cycle/6 or below."""
        dips = self.report.workload_dips()
        ran = ~np.isnan(self.report.min_W)
        with np.errstate(invalid="ignore"):
            return dips.sum(axis=0) / ran.sum(axis=0)

    @property
    def passed(self) -> bool:
        return self.increasing_fraction() > 0.5


def exp_workload_growth(cfg: InductionConfig, cycles: int = 3, grid: float | None = None,
                        report: GrowthReport | None = None) -> WorkloadGrowth:
    """Per-cycle minima of the total workload on the instability paths.

    Pass ``report`` to reuse paths already simulated by ``exp_instability``.
    """
    return WorkloadGrowth(report if report is not None else exp_instability(cfg, cycles, grid))


def marks_row(cycle: int, m: CycleMarks) -> dict:
    """CSV row for one cycle (roles resolved, so Z5_T is the growing class)."""
    r = ROLES[m.mirrored]
    return {
        "cycle": cycle,
        "S1": m.S1,
        "S2": m.S2,
        "T": m.T,
        "Z5_T": m.head_end if m.complete else math.nan,
        "Z12_T": m.front_end if m.complete else math.nan,
        "W6_T": m.W_tail_T,
        "minZ": m.min_Z,
        "events_ok": m.bitmask(),
        "N": m.N,
        "mirrored": int(m.mirrored),
        "minW": m.min_W,
        "empirical_a": m.empirical_a if m.Z_S1 and m.Z_S1.get(r["drained"][1]) else math.nan,
    }


def config_record(cfg: InductionConfig) -> dict:
    return asdict(cfg)
