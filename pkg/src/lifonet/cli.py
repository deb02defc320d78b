"""Command-line entry point.

Settings come from built-in defaults, then an optional JSON config file
(``--config``; a run manifest works too), then flags.  Every command writes
``manifest.json`` into the output directory before it starts.

Exit codes: 0 success, 2 configuration error, 3 truncated run,
4 numerical solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io
from .engine import EVENT_CAP, InitialCondition, Record, StopRule, init_state
from .model import SpecError, build_fig1, build_fig2, exponentialize, load_spec, traffic, with_discipline
from .stochastics import Deterministic, Exponential, NuLaw, SolverError, solve_nu_params

EXIT_OK, EXIT_CONFIG, EXIT_TRUNCATED, EXIT_SOLVER = 0, 2, 3, 4
COMMANDS = (
    "simulate", "induction", "instability", "drift-lemma", "counting-ld", "ps-hlpps",
    "stage-coupling", "workload-growth", "solve-nu", "validate",
)
NEEDS_N = ("induction", "instability", "workload-growth")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str | None = None
    network: str = "fig1"
    M: float = 100.0
    delta: float = 0.2
    couple: bool = False
    N: int | None = None
    L: int | None = None
    discipline: str | None = None
    exponential: bool = False
    init: dict = field(default_factory=dict)
    horizon: float | None = None
    max_events: int | None = None
    cap: int = EVENT_CAP
    seed: int = 0
    replications: int = 20
    cycles: int = 3
    scan: bool = False
    grid: float | None = None
    output: str | None = None
    plot: bool = False
    jobs: int = 1
    backend: str | None = None
    # lemma verifiers
    eta: float = 0.2
    beta: float = 0.1
    x_grid: list = field(default_factory=lambda: [float(x) for x in range(0, 42, 2)])
    t0_grid: list = field(default_factory=lambda: [10.0, 20.0, 40.0, 80.0, 160.0])
    t_grid: list = field(default_factory=lambda: [100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0])
    law: str = "nu"
    # PS/HLPPS
    t: float = 50.0
    experiments: int = 1
    alpha: float = 0.01
    # stage coupling
    seeds: list = field(default_factory=lambda: [0])

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command in NEEDS_N and self.N is None and not (self.command != "induction" and self.scan):
            raise ConfigError(f"command {self.command} needs N")
        if self.N is not None and (int(self.N) != self.N or self.N <= 0):
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        if self.L is not None and self.network not in ("fig2",):
            raise ConfigError("L selects the stage count of fig2 and conflicts with network " + repr(self.network))
        if self.jobs < 1 or self.replications < 1:
            raise ConfigError("jobs and replications must be at least 1")
        if self.law not in ("nu", "exp", "det"):
            raise ConfigError(f"law must be nu, exp or det, got {self.law!r}")


_FIELDS = {f.name for f in fields(RunConfig)}


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _init(text: str) -> dict:
    out = {}
    for part in text.replace(",", " ").split():
        k, _, v = part.partition("=")
        if not v:
            raise argparse.ArgumentTypeError(f"initial counts use class=count, got {part!r}")
        out[k] = int(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = argparse.ArgumentParser(
        prog="lifonet",
        description="Simulate multiclass queueing networks under LIFO and related disciplines.",
        argument_default=S,
    )
    p.add_argument("command", choices=COMMANDS, nargs="?", default=None, help="what to run")
    p.add_argument("--config", default=None, help="JSON config file or a run manifest")
    g = p.add_argument_group("network")
    g.add_argument("--net", dest="network", help="fig1, fig2 or a JSON spec file (default fig1)")
    g.add_argument("--M", type=float, help="burst scale of the arrival law (default 100)")
    g.add_argument("--delta", type=float, help="service-time parameter, 0 < delta < 1 (default 0.2)")
    g.add_argument("--couple", action="store_true", help="set delta = M^(-1/15)")
    g.add_argument("--L", type=int, help="stage count for fig2 (default derived from delta)")
    g.add_argument("--exponential", action="store_true", help="replace every service law by an exponential of equal mean")
    g.add_argument("--discipline", help="override every station: lifo_preemptive, lifo_nonpreemptive, fifo, ps, hlpps, is")
    r = p.add_argument_group("run")
    r.add_argument("--N", type=int, help="initial head-class count for the cycle experiments")
    r.add_argument("--init", type=_init, help="initial counts, e.g. '2=100,5=3' (simulate, ps-hlpps)")
    r.add_argument("--horizon", type=float, help="stop time")
    r.add_argument("--max-events", dest="max_events", type=int, help="event budget")
    r.add_argument("--cap", type=int, help=f"event cap per stopping phase (default {EVENT_CAP:g})")
    r.add_argument("--seed", type=int, help="base seed (default 0)")
    r.add_argument("--replications", type=int, help="replications (default 20)")
    r.add_argument("--cycles", type=int, help="cycles for instability/workload-growth (default 3)")
    r.add_argument("--scan", action="store_true", help="instability: search presets until one passes")
    r.add_argument("--grid", type=float, help="sample spacing for recorded series")
    r.add_argument("--jobs", type=int, help="worker processes (default 1)")
    r.add_argument("--backend", choices=("cython", "python"), help="event kernel (default: compiled if built)")
    o = p.add_argument_group("output")
    o.add_argument("--output", help="output directory (default $LIFONET_OUTPUT_DIR/<command> or ./lifonet-out/<command>)")
    o.add_argument("--plot", action="store_true", help="write SVG charts")
    lm = p.add_argument_group("lemma verifiers")
    lm.add_argument("--eta", type=float, help="drift-lemma rate excess (default 0.2)")
    lm.add_argument("--beta", type=float, help="counting-ld deviation (default 0.1)")
    lm.add_argument("--x-grid", dest="x_grid", type=_floats, help="drift-lemma thresholds for |B|")
    lm.add_argument("--t0-grid", dest="t0_grid", type=_floats, help="drift-lemma start times")
    lm.add_argument("--t-grid", dest="t_grid", type=_floats, help="counting-ld times")
    lm.add_argument("--law", choices=("nu", "exp", "det"), help="counting-ld renewal law (default nu with M)")
    q = p.add_argument_group("ps-hlpps and stage-coupling")
    q.add_argument("--t", type=float, help="ps-hlpps sample time (default 50)")
    q.add_argument("--experiments", type=int, help="ps-hlpps repeated experiments (default 1)")
    q.add_argument("--alpha", type=float, help="ps-hlpps KS level (default 0.01)")
    q.add_argument("--seeds", type=_ints, help="stage-coupling seeds, e.g. '0,1,2'")
    return p


def parse_config(argv=None) -> RunConfig:
    """Defaults, then the config file, then flags."""
    args = vars(build_parser().parse_args(argv))
    cfg_path = args.pop("config", None)
    values: dict = {}
    if cfg_path:
        try:
            with open(cfg_path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {cfg_path}: {exc}") from exc
        if isinstance(data, dict) and "experiment" in data and "config" in data:
            data = data["config"]  # a run manifest
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - _FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(data)
    if args.get("command") is None:
        args.pop("command")
    values.update(args)
    if values.get("couple"):
        if "delta" in args:
            raise ConfigError("--couple derives delta from M; drop --delta")
        values["delta"] = None
    cfg = RunConfig(**values)
    if cfg.command is None:
        raise ConfigError("no command given")
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _network(cfg: RunConfig):
    if cfg.network == "fig1":
        spec = build_fig1(cfg.M, cfg.delta, couple=cfg.couple)
    elif cfg.network == "fig2":
        spec = build_fig2(cfg.M, cfg.delta, L=cfg.L, couple=cfg.couple)
    else:
        path = Path(cfg.network)
        if not path.exists():
            raise ConfigError(f"network must be fig1, fig2 or an existing spec file, got {cfg.network!r}")
        spec = load_spec(path)
    if cfg.exponential:
        spec = exponentialize(spec)
    if cfg.discipline:
        spec = with_discipline(spec, cfg.discipline)
    return spec


def _outdir(cfg: RunConfig) -> Path:
    if cfg.output:
        return Path(cfg.output)
    base = os.environ.get("LIFONET_OUTPUT_DIR", "lifonet-out")
    return Path(base) / cfg.command


def _induction_cfg(cfg: RunConfig, M=None, delta=None, N=None) -> ex.InductionConfig:
    return ex.InductionConfig(
        M=M if M is not None else cfg.M,
        delta=delta if delta is not None else cfg.delta,
        N=N if N is not None else cfg.N,
        replications=cfg.replications,
        seed=cfg.seed,
        cap=cfg.cap,
        jobs=cfg.jobs,
        backend=cfg.backend,
    )


def _say(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, man: io.Manifest) -> int:
    spec = _network(cfg)
    if cfg.horizon is None and cfg.max_events is None:
        raise ConfigError("simulate needs --horizon or --max-events")
    state = init_state(spec, InitialCondition(cfg.init), seed=cfg.seed, backend=cfg.backend)
    stop = StopRule(horizon=cfg.horizon if cfg.horizon is not None else math.inf,
                    max_events=cfg.max_events, cap=cfg.cap)
    tr = state.run(stop, Record(series=True, grid=cfg.grid))
    s = tr.series
    rows = []
    for i in range(len(s["time"])):
        row = {"time": s["time"][i]}
        row.update({f"Z{g}": int(s["Z"][i, j]) for j, g in enumerate(tr.groups)})
        row.update({f"W{g}": s["W"][i, j] for j, g in enumerate(tr.groups)})
        row["Wtotal"] = s["Wtotal"][i]
        rows.append(row)
    man.csv("trajectory.csv", rows)
    man.json("summary.json", {"reason": tr.reason, "truncated": tr.truncated, "t_end": tr.t_end,
                              "events": tr.steps, "final_counts": state.counts(), "backend": tr.backend})
    if cfg.plot:
        man.add(io.line_chart(man.dir / "trajectory.svg", s["time"],
                              {g: s["Z"][:, j] for j, g in enumerate(tr.groups)}, "time", "jobs"))
        man.add(io.line_chart(man.dir / "workload.svg", s["time"], {"total": s["Wtotal"]}, "time", "workload"))
    _say(f"simulate: {tr.steps} events to t={tr.t_end:.6g} ({tr.reason}); final counts {state.counts()}")
    return EXIT_TRUNCATED if tr.truncated else EXIT_OK


def _cycle_rows(report_marks) -> list[dict]:
    rows = []
    for rep, marks in enumerate(report_marks):
        for c, m in enumerate(marks):
            row = {"replication": rep}
            row.update(ex.marks_row(c + 1, m))
            rows.append(row)
    return rows


def cmd_induction(cfg: RunConfig, man: io.Manifest) -> int:
    res = ex.exp_induction(_induction_cfg(cfg))
    man.csv("cycles.csv", _cycle_rows([[m] for m in res.marks]))
    freq = res.frequencies()
    man.csv("frequencies.csv", [{"event": k, **v} for k, v in freq.items()])
    man.json("summary.json", {"preset": res.config.preset, "frequencies": freq, "truncated": res.truncated})
    for k, v in freq.items():
        _say(f"{k:>22}: {v['hits']}/{v['n']}  [{v['lo']:.3f}, {v['hi']:.3f}]")
    return EXIT_TRUNCATED if res.truncated else EXIT_OK


def _growth_outputs(cfg: RunConfig, rep: ex.GrowthReport, man: io.Manifest, extra: dict) -> None:
    rows = []
    ratios = rep.ratios
    for i in range(rep.head.shape[0]):
        for c in range(rep.cycles):
            rows.append({"replication": i, "cycle": c + 1, "T": rep.T[i, c], "head": rep.head[i, c],
                         "ratio": ratios[i, c], "minZ": rep.min_Z[i, c], "minW": rep.min_W[i, c]})
    man.csv("growth.csv", rows)
    man.csv("cycles.csv", _cycle_rows(rep.marks))
    summary = {
        "preset": rep.config.preset,
        "median_heads": rep.median_heads(),
        "median_ratios": rep.median_ratios(),
        "growth_ok": rep.growth_ok(),
        "min_count_ok": rep.min_count_ok(),
        "passed": rep.passed,
        "event_frequencies": rep.event_frequencies(),
        "workload_increasing_fraction": float(rep.workload_increasing().mean()),
        "flags": rep.flags,
    }
    summary.update(extra)
    man.json("summary.json", summary)
    if cfg.plot:
        cyc = np.arange(1, rep.cycles + 1)
        man.add(io.line_chart(man.dir / "growth.svg", cyc, {"median head count": rep.median_heads()},
                              "cycle", "jobs in growing class", logy=True))
        man.add(io.line_chart(man.dir / "ratios.svg", cyc, {"median growth ratio": rep.median_ratios()},
                              "cycle", "ratio"))
        if rep.series is not None:
            s = rep.series
            man.add(io.line_chart(man.dir / "trajectory.svg", s["time"],
                                  {g: s["Z"][:, j] for j, g in enumerate(s["groups"])}, "time", "jobs"))
            man.add(io.line_chart(man.dir / "workload.svg", s["time"], {"total": s["Wtotal"]}, "time", "workload"))


def cmd_instability(cfg: RunConfig, man: io.Manifest) -> int:
    extra: dict = {}
    grid = cfg.grid if cfg.plot else None
    if cfg.scan:
        cands = None
        if cfg.N is not None:
            cands = [(cfg.M, cfg.delta, cfg.N), *ex.SCAN_GRID]
        res = ex.scan_instability(cfg.replications, cfg.cycles, cfg.seed, cfg.jobs, cands, cfg.backend, cfg.cap,
                                  progress=lambda row: _say(f"scan: {row}"))
        extra["scan"] = res.tried
        extra["chosen_preset"] = res.chosen
        man.note("chosen_preset", res.chosen)
        if res.report is None:
            man.json("summary.json", extra)
            _say("scan: no preset passed")
            return EXIT_OK
        rep = res.report
        if grid:
            rep = ex.exp_instability(rep.config, cfg.cycles, grid)
    else:
        rep = ex.exp_instability(_induction_cfg(cfg), cfg.cycles, grid)
    _growth_outputs(cfg, rep, man, extra)
    _say(f"instability {rep.config.preset}: median heads {rep.median_heads().tolist()}, "
         f"median ratios {np.round(rep.median_ratios(), 3).tolist()}, passed={rep.passed}")
    return EXIT_TRUNCATED if rep.flags and any("not reached" in f for f in rep.flags) else EXIT_OK


def cmd_workload_growth(cfg: RunConfig, man: io.Manifest) -> int:
    rep = ex.exp_instability(_induction_cfg(cfg), cfg.cycles, cfg.grid if cfg.plot else None)
    wg = ex.exp_workload_growth(rep.config, report=rep)
    rows = [{"replication": i, "cycle": c + 1, "minW": rep.min_W[i, c], "dip": bool(rep.workload_dips()[i, c])}
            for i in range(rep.head.shape[0]) for c in range(rep.cycles)]
    man.csv("workload.csv", rows)
    man.json("summary.json", {"preset": rep.config.preset, "W0": rep.W0, "median_min_W": np.nanmedian(rep.min_W, axis=0),
                              "increasing_fraction": wg.increasing_fraction(), "dip_frequency": wg.dip_frequency(),
                              "passed": wg.passed, "flags": rep.flags})
    if cfg.plot and rep.series is not None:
        s = rep.series
        man.add(io.line_chart(man.dir / "workload.svg", s["time"], {"total": s["Wtotal"]}, "time", "workload"))
    _say(f"workload-growth: min W increasing in {wg.increasing_fraction():.0%} of replications")
    return EXIT_TRUNCATED if any("not reached" in f for f in rep.flags) else EXIT_OK


def cmd_drift(cfg: RunConfig, man: io.Manifest) -> int:
    res = ex.exp_drift_lemma(cfg.eta, cfg.t0_grid, cfg.x_grid, cfg.replications, cfg.seed)
    man.csv("idle_tail.csv", res.busy_tail.rows())
    man.csv("excursion.csv", res.excursion.rows())
    man.json("summary.json", {"eta": cfg.eta, "reps": cfg.replications, "horizon": res.horizon,
                              "slope": res.busy_tail.slope, "slope_upper_99": res.busy_tail.slope_upper(0.99),
                              "excursion_nonincreasing": res.excursion.nonincreasing()})
    if cfg.plot:
        b = res.busy_tail
        man.add(io.line_chart(man.dir / "idle_tail.svg", b.x, {"P(|B| >= x)": b.p}, "x", "probability",
                              logy=True, bands={"P(|B| >= x)": (b.lo, b.hi)}))
    _say(f"drift-lemma: slope {res.busy_tail.slope:.4f} (99% upper {res.busy_tail.slope_upper(0.99):.4f})")
    return EXIT_OK


def _law(cfg: RunConfig):
    if cfg.law == "nu":
        return NuLaw.from_M(cfg.M)
    if cfg.law == "exp":
        return Exponential(1.0)
    return Deterministic(1.0)


def cmd_counting(cfg: RunConfig, man: io.Manifest) -> int:
    tail = ex.exp_counting_ld(_law(cfg), cfg.beta, cfg.t_grid, cfg.replications, cfg.seed)
    man.csv("tail.csv", tail.rows())
    man.json("summary.json", {"law": cfg.law, "M": cfg.M, "beta": cfg.beta, "nonincreasing": tail.nonincreasing()})
    if cfg.plot:
        man.add(io.line_chart(man.dir / "tail.svg", tail.x, {"deviation probability": tail.p}, "t", "probability",
                              bands={"deviation probability": (tail.lo, tail.hi)}))
    _say(f"counting-ld: P = {np.round(tail.p, 4).tolist()}")
    return EXIT_OK


def cmd_ps_hlpps(cfg: RunConfig, man: io.Manifest) -> int:
    spec = _network(cfg)
    try:
        ex.check_exponential(spec)
    except ValueError as exc:
        raise ConfigError(f"{exc}; add --exponential") from exc
    rep = ex.exp_ps_hlpps(spec, cfg.t, cfg.replications, cfg.experiments, cfg.seed, cfg.alpha,
                          InitialCondition(cfg.init), cfg.jobs, cfg.backend)
    rows = [{"experiment": e, **{f"D{g}": rep.statistics[e, j] for j, g in enumerate(rep.classes)},
             "passed": bool(rep.passed[e])} for e in range(rep.statistics.shape[0])]
    man.csv("ks.csv", rows)
    man.json("summary.json", {"critical": rep.critical, "alpha": rep.alpha, "pass_fraction": rep.pass_fraction})
    _say(f"ps-hlpps: pass fraction {rep.pass_fraction:.3f} (critical {rep.critical:.4f})")
    return EXIT_OK


def cmd_coupling(cfg: RunConfig, man: io.Manifest) -> int:
    if cfg.horizon is None and cfg.max_events is None:
        raise ConfigError("stage-coupling needs --horizon or --max-events")
    rows = []
    for s in cfg.seeds:
        r = ex.exp_stage_coupling(cfg.M, cfg.delta, s, cfg.horizon, cfg.max_events, cfg.backend)
        rows.append({"seed": s, "L": r.L, "events_fig1": r.events, "events_fig2": r.events_b,
                     "count_discrepancy": r.count, "workload_discrepancy": r.workload,
                     "first_divergence": "" if r.first_divergence is None else r.first_divergence})
        if not r.ok:
            _say(f"stage-coupling: seed {s} diverges at {r.divergence_row}")
    man.csv("coupling.csv", rows)
    man.json("summary.json", {"all_zero": all(r["count_discrepancy"] == 0 for r in rows)})
    _say(f"stage-coupling: max count discrepancy {max(r['count_discrepancy'] for r in rows)}")
    return EXIT_OK


def cmd_solve_nu(cfg: RunConfig, man: io.Manifest) -> int:
    p = solve_nu_params(cfg.M)
    man.json("nu.json", p.to_record())
    _say(f"nu(M={cfg.M:g}): beta={p.beta!r} gamma={p.gamma!r}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, man: io.Manifest) -> int:
    spec = _network(cfg)
    spec.validate()
    rep = traffic(spec)
    man.json("traffic.json", {"loads": rep.loads, "subcritical": rep.subcritical})
    _say(f"{spec.name}: station loads {rep.loads}")
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "induction": cmd_induction,
    "instability": cmd_instability,
    "workload-growth": cmd_workload_growth,
    "drift-lemma": cmd_drift,
    "counting-ld": cmd_counting,
    "ps-hlpps": cmd_ps_hlpps,
    "stage-coupling": cmd_coupling,
    "solve-nu": cmd_solve_nu,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except (ConfigError, SpecError, TypeError) as exc:
        print(f"lifonet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        man = io.Manifest(_outdir(cfg), cfg.command, asdict(cfg))
    except OSError as exc:
        print(f"lifonet: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = HANDLERS[cfg.command](cfg, man)
    except ValueError as exc:
        # ConfigError, SpecError and parameter checks inside the experiments
        print(f"lifonet: config error: {exc}", file=sys.stderr)
        man.finish("config error", EXIT_CONFIG)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"lifonet: solver failure: {exc}", file=sys.stderr)
        man.finish("solver failure", EXIT_SOLVER)
        return EXIT_SOLVER
    man.finish("truncated" if code == EXIT_TRUNCATED else "ok", code)
    return code


if __name__ == "__main__":
    sys.exit(main())
