"""Network topology, builders for the two LIFO network families, and static analysis."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from numbers import Real
from typing import Iterable, Mapping, Sequence

from scipy.optimize import brentq

from .stochastics import (
    Deterministic,
    ErlangMixture,
    Exponential,
    NuLaw,
    NuParams,
    solve_nu_params,
)

__all__ = [
    "Discipline",
    "ClassDef",
    "Source",
    "Station",
    "NetworkSpec",
    "TrafficReport",
    "SpecError",
    "StateSnapshot",
    "build_fig1",
    "build_fig2",
    "stage_count",
    "traffic",
    "stage_expand",
    "with_discipline",
    "exponentialize",
    "state_distance",
    "spec_to_dict",
    "spec_from_dict",
    "dumps",
    "loads",
    "save_spec",
    "load_spec",
]


class SpecError(ValueError):
    """Invalid network parameters or topology."""


class Discipline(str, enum.Enum):
    LIFO_PREEMPTIVE = "lifo_preemptive"
    LIFO_NONPREEMPTIVE = "lifo_nonpreemptive"
    FIFO = "fifo"
    PS = "ps"
    HLPPS = "hlpps"
    IS = "is"

    @classmethod
    def parse(cls, value) -> "Discipline":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise SpecError(f"unknown discipline {value!r}")


@dataclass(frozen=True)
class ClassDef:
    label: str
    station: str
    service: object
    next: str | None = None
    group: str | None = None

    @property
    def parent(self) -> str:
        """Observable group this class reports under (stage classes map to their parent)."""
        return self.group if self.group is not None else self.label

    @property
    def mean(self):
        return self.service.mean


@dataclass(frozen=True)
class Source:
    entry: str
    law: object


@dataclass(frozen=True)
class Station:
    name: str
    discipline: Discipline = Discipline.LIFO_PREEMPTIVE

    def __post_init__(self):
        object.__setattr__(self, "discipline", Discipline.parse(self.discipline))


@dataclass(frozen=True)
class NetworkSpec:
    """Classes with successor chains, external sources, and stations.

    ``params`` carries the builder knobs (``M``, ``delta``, ``L`` ...) and an
    optional ``workloads`` list naming the groups whose immediate workload is
    reported in observable series.
    """

    classes: tuple[ClassDef, ...]
    sources: tuple[Source, ...]
    stations: tuple[Station, ...]
    params: Mapping = field(default_factory=dict)
    name: str = "network"

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "stations", tuple(self.stations))
        object.__setattr__(self, "params", dict(self.params))
        self.validate()

    # -- lookups ---------------------------------------------------------
    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.classes]

    def index(self, label: str) -> int:
        for i, c in enumerate(self.classes):
            if c.label == label:
                return i
        raise KeyError(label)

    def cls(self, label: str) -> ClassDef:
        return self.classes[self.index(label)]

    def station(self, name: str) -> Station:
        for s in self.stations:
            if s.name == name:
                return s
        raise KeyError(name)

    def station_classes(self, name: str) -> list[str]:
        return [c.label for c in self.classes if c.station == name]

    @property
    def groups(self) -> list[str]:
        out: list[str] = []
        for c in self.classes:
            if c.parent not in out:
                out.append(c.parent)
        return out

    def group_members(self, group: str) -> list[str]:
        return [c.label for c in self.classes if c.parent == group]

    def route_from(self, label: str) -> list[str]:
        route = [label]
        nxt = self.cls(label).next
        while nxt is not None:
            route.append(nxt)
            nxt = self.cls(nxt).next
        return route

    @property
    def workload_groups(self) -> list[str]:
        return list(self.params.get("workloads", self.groups))

    def validate(self) -> None:
        labels = self.labels
        if len(set(labels)) != len(labels):
            raise SpecError("class labels must be unique")
        names = [s.name for s in self.stations]
        if len(set(names)) != len(names):
            raise SpecError("station names must be unique")
        for c in self.classes:
            if c.station not in names:
                raise SpecError(f"class {c.label} refers to unknown station {c.station}")
            if c.next is not None and c.next not in labels:
                raise SpecError(f"class {c.label} routes to unknown class {c.next}")
            if not c.mean > 0:
                raise SpecError(f"class {c.label} has nonpositive mean {c.mean}")
        for name in names:
            if not self.station_classes(name):
                raise SpecError(f"station {name} has no classes")
        for c in self.classes:
            seen = {c.label}
            nxt = c.next
            while nxt is not None:
                if nxt in seen:
                    raise SpecError(f"route through class {c.label} is cyclic")
                seen.add(nxt)
                nxt = self.cls(nxt).next
        for src in self.sources:
            if src.entry not in labels:
                raise SpecError(f"source enters unknown class {src.entry}")
        M = self.params.get("M")
        if M is not None and not M > 1:
            raise SpecError(f"M must exceed 1, got {M}")
        delta = self.params.get("delta")
        if delta is not None and not 0 < delta < 1:
            raise SpecError(f"delta must lie in (0, 1), got {delta}")


@dataclass(frozen=True)
class TrafficReport:
    rates: dict
    loads: dict

    @property
    def max_load(self):
        return max(self.loads.values())

    @property
    def subcritical(self) -> bool:
        return self.max_load < 1


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _fig1_means(delta):
    d3 = delta**3
    return {
        "1": d3,
        "2": 1 - delta,
        "3": 1 - delta + d3,
        "4": d3,
        "5": 1 - delta,
        "6": 1 - delta + d3,
    }


def build_fig1(M, delta=None, couple: bool = False, nu: NuParams | None = None) -> NetworkSpec:
    """Six-class, four-station LIFO network.

    Routes ``1 -> 2 -> 3`` and ``4 -> 5 -> 6``; stations I = {1, 6},
    II = {2}, III = {5}, IV = {3, 4}.  Classes 2 and 5 are exponential, the
    rest deterministic.  With ``couple`` the gap is forced to
    ``delta = M**(-1/15)``.
    """
    if not M > 4:
        raise SpecError(f"M must exceed 4, got {M}")
    if couple:
        delta = float(M) ** (-1.0 / 15.0)
    if delta is None:
        raise SpecError("delta is required unless couple=True")
    if not 0 < delta < 1:
        raise SpecError(f"delta must lie in (0, 1), got {delta}")
    means = _fig1_means(delta)
    if any(not m > 0 for m in means.values()):
        raise SpecError("parameters give a nonpositive mean service time")
    law = NuLaw(nu if nu is not None else solve_nu_params(M))

    def service(label):
        m = means[label]
        return Exponential(m) if label in ("2", "5") else Deterministic(m)

    classes = (
        ClassDef("1", "I", service("1"), "2"),
        ClassDef("2", "II", service("2"), "3"),
        ClassDef("3", "IV", service("3"), None),
        ClassDef("4", "IV", service("4"), "5"),
        ClassDef("5", "III", service("5"), "6"),
        ClassDef("6", "I", service("6"), None),
    )
    stations = tuple(Station(n) for n in ("I", "II", "III", "IV"))
    spec = NetworkSpec(
        classes,
        (Source("1", law), Source("4", law)),
        stations,
        {"M": M, "delta": delta, "couple": bool(couple), "workloads": ["3", "6"]},
        name="fig1",
    )
    rep = traffic(spec)
    if not rep.subcritical:
        raise SpecError(f"network is not subcritical: max station load {float(rep.max_load):.6g}")
    return spec


def _nearest_valid_delta(delta: float, L: float) -> float:
    best = None
    for n in {max(2, math.floor(L)), max(2, math.ceil(L))}:
        root = brentq(lambda d: (n - 1) * d**3 + d - 1.0, 1e-12, 1.0, xtol=1e-15)
        if best is None or abs(root - delta) < abs(best - delta):
            best = root
    return best


def stage_count(delta) -> int:
    """Integer ``L = (1 - delta + delta**3) / delta**3``, or raise naming the nearest valid delta."""
    L = (1 - delta + delta**3) / delta**3
    n = round(L)
    if abs(L - n) > 1e-9:
        near = _nearest_valid_delta(float(delta), float(L))
        raise SpecError(
            f"(1 - delta + delta^3)/delta^3 = {float(L):.6g} is not an integer for delta={float(delta):g}; "
            f"nearest valid delta is {near:.12g}"
        )
    return int(n)


def build_fig2(M, delta=None, L: int | None = None, couple: bool = False, nu: NuParams | None = None) -> NetworkSpec:
    """Kelly-type variant: classes 3 and 6 split into ``L`` deterministic stages."""
    if couple:
        delta = float(M) ** (-1.0 / 15.0)
    if delta is None:
        raise SpecError("delta is required unless couple=True")
    if not 0 < delta < 1:
        raise SpecError(f"delta must lie in (0, 1), got {delta}")
    n = stage_count(delta)
    if L is not None and int(L) != n:
        raise SpecError(f"L={L} does not match (1 - delta + delta^3)/delta^3 = {n}")
    base = build_fig1(M, delta, couple=False, nu=nu)
    spec = stage_expand(stage_expand(base, "3", n), "6", n)
    params = dict(spec.params)
    params["L"] = n
    params["couple"] = bool(couple)
    return replace(spec, params=params, name="fig2")


# ---------------------------------------------------------------------------
# Static analysis and transformations
# ---------------------------------------------------------------------------


def _inverse(x):
    if isinstance(x, (int, Fraction)):
        return Fraction(1) / x
    return 1.0 / x


def traffic(spec: NetworkSpec) -> TrafficReport:
    """Per-class arrival rates by flow along the routes, and per-station loads."""
    rates = {c.label: 0 for c in spec.classes}
    for src in spec.sources:
        lam = _inverse(src.law.mean)
        for label in spec.route_from(src.entry):
            rates[label] = rates[label] + lam
    loads = {s.name: 0 for s in spec.stations}
    for c in spec.classes:
        loads[c.station] = loads[c.station] + rates[c.label] * c.mean
    return TrafficReport(rates, loads)


def stage_expand(spec: NetworkSpec, label: str, L: int) -> NetworkSpec:
    """Replace a class by ``L`` consecutive stage classes at the same station.

    Deterministic service splits into ``L`` equal deterministic stages; an
    Erlang law with ``k`` phases splits into ``k`` exponential stages
    (``L`` must equal ``k``).  Stage classes are labelled ``label.1`` ...
    ``label.L`` and report under the original class's group.
    """
    L = int(L)
    if L < 1:
        raise SpecError(f"stage count must be >= 1, got {L}")
    target = spec.cls(label)
    law = target.service
    if isinstance(law, Deterministic):
        stage_laws = [Deterministic(law.mean / L) for _ in range(L)]
    elif isinstance(law, ErlangMixture) and len(law.components) == 1:
        _, k, m = law.components[0]
        if k != L:
            raise SpecError(f"Erlang law with {k} phases needs L={k}, got {L}")
        stage_laws = [Exponential(m) for _ in range(L)]
    elif isinstance(law, Exponential) and L == 1:
        stage_laws = [law]
    else:
        raise SpecError(f"cannot stage-expand class {label} with law {law!r} into {L} stages")

    names = [f"{label}.{i}" for i in range(1, L + 1)]
    group = target.parent
    new_classes = []
    for c in spec.classes:
        if c.label == label:
            for i, name in enumerate(names):
                nxt = names[i + 1] if i + 1 < L else target.next
                new_classes.append(ClassDef(name, c.station, stage_laws[i], nxt, group))
        else:
            nxt = names[0] if c.next == label else c.next
            new_classes.append(replace(c, next=nxt))
    sources = tuple(Source(names[0], s.law) if s.entry == label else s for s in spec.sources)
    params = dict(spec.params)
    stages = dict(params.get("stages", {}))
    stages[label] = L
    params["stages"] = stages
    if isinstance(law, Deterministic):
        # exact unsplit service, so a chain of stages can end where the parent would
        totals = dict(params.get("stage_totals", {}))
        totals[group] = law.mean
        params["stage_totals"] = totals
    return NetworkSpec(tuple(new_classes), sources, spec.stations, params, spec.name)


def with_discipline(spec: NetworkSpec, discipline, stations: Iterable[str] | None = None) -> NetworkSpec:
    disc = Discipline.parse(discipline)
    chosen = set(stations) if stations is not None else {s.name for s in spec.stations}
    new = tuple(Station(s.name, disc) if s.name in chosen else s for s in spec.stations)
    return replace(spec, stations=new)


def exponentialize(spec: NetworkSpec) -> NetworkSpec:
    """Same network with every service law replaced by an exponential of equal mean."""
    classes = tuple(replace(c, service=Exponential(c.mean)) for c in spec.classes)
    return replace(spec, classes=classes)


# ---------------------------------------------------------------------------
# State metric
# ---------------------------------------------------------------------------


@dataclass
class StateSnapshot:
    """Point of the state space.

    ``jobs`` holds ``(class_number, age, residual)`` for jobs at classes of
    multi-class stations (age ``inf`` for jobs present initially);
    ``counts`` holds job counts of single-class-station classes; ``clocks``
    the residual interarrival times keyed by entry class.
    """

    jobs: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    clocks: dict = field(default_factory=dict)

    def ordered_jobs(self) -> list:
        return sorted(self.jobs, key=lambda r: (-r[0], -r[1]))


def _gap(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b)


def state_distance(x, y) -> float:
    """Metric on snapshots: capped per-job terms plus count and clock differences."""
    x = x.snapshot() if hasattr(x, "snapshot") else x
    y = y.snapshot() if hasattr(y, "snapshot") else y
    xs, ys = x.ordered_jobs(), y.ordered_jobs()
    n = max(len(xs), len(ys))
    zero = (0.0, 0.0, 0.0)
    total = 0.0
    for i in range(n):
        a = xs[i] if i < len(xs) else zero
        b = ys[i] if i < len(ys) else zero
        term = _gap(a[0], b[0]) + _gap(a[1], b[1]) + _gap(a[2], b[2])
        total += min(term, 1.0)
    for key in set(x.counts) | set(y.counts):
        total += abs(x.counts.get(key, 0) - y.counts.get(key, 0))
    for key in set(x.clocks) | set(y.clocks):
        total += _gap(x.clocks.get(key, 0.0), y.clocks.get(key, 0.0))
    return total


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _num_out(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, bool):
        return x
    if isinstance(x, int):
        return x
    if isinstance(x, Real):
        return float(x)
    return x


def _num_in(x):
    if isinstance(x, str) and "/" in x:
        return Fraction(x)
    return x


def _law_out(law) -> dict:
    if isinstance(law, Deterministic):
        return {"kind": "deterministic", "mean": _num_out(law.mean)}
    if isinstance(law, Exponential):
        return {"kind": "exponential", "mean": _num_out(law.mean)}
    if isinstance(law, ErlangMixture):
        return {"kind": "erlang_mixture", "components": [list(c) for c in law.components]}
    if isinstance(law, NuLaw):
        return {"kind": "nu", **law.params.to_record()}
    raise TypeError(f"cannot serialize law {law!r}")


def _law_in(d: Mapping):
    kind = d["kind"]
    if kind == "deterministic":
        return Deterministic(_num_in(d["mean"]))
    if kind == "exponential":
        return Exponential(_num_in(d["mean"]))
    if kind == "erlang_mixture":
        return ErlangMixture(tuple(tuple(c) for c in d["components"]))
    if kind == "nu":
        if "beta" in d and "gamma" in d:
            p = NuParams(d["M"], d["beta"], d["gamma"], d.get("mass_residual", 0.0), d.get("mean_residual", 0.0))
        else:
            p = solve_nu_params(d["M"])
        return NuLaw(p)
    raise SpecError(f"unknown law kind {kind!r}")


def _params_out(params: Mapping) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, Mapping):
            out[k] = _params_out(v)
        elif isinstance(v, (list, tuple)):
            out[k] = [_num_out(x) for x in v]
        else:
            out[k] = _num_out(v)
    return out


def _params_in(params: Mapping) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, Mapping):
            out[k] = _params_in(v)
        elif isinstance(v, list):
            out[k] = [_num_in(x) for x in v]
        else:
            out[k] = _num_in(v)
    return out


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "name": spec.name,
        "params": _params_out(spec.params),
        "stations": [{"name": s.name, "discipline": s.discipline.value} for s in spec.stations],
        "classes": [
            {
                "label": c.label,
                "station": c.station,
                "next": c.next,
                "group": c.group,
                "service": _law_out(c.service),
            }
            for c in spec.classes
        ],
        "sources": [{"entry": s.entry, "law": _law_out(s.law)} for s in spec.sources],
    }


def spec_from_dict(d: Mapping) -> NetworkSpec:
    known = {"name", "params", "stations", "classes", "sources"}
    unknown = set(d) - known
    if unknown:
        raise SpecError(f"unknown network keys: {sorted(unknown)}")
    stations = tuple(Station(s["name"], s.get("discipline", "lifo_preemptive")) for s in d["stations"])
    classes = tuple(
        ClassDef(c["label"], c["station"], _law_in(c["service"]), c.get("next"), c.get("group"))
        for c in d["classes"]
    )
    sources = tuple(Source(s["entry"], _law_in(s["law"])) for s in d.get("sources", []))
    return NetworkSpec(classes, sources, stations, _params_in(d.get("params", {})), d.get("name", "network"))


def dumps(spec: NetworkSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=False)


def loads(text: str) -> NetworkSpec:
    return spec_from_dict(json.loads(text))


def save_spec(spec: NetworkSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(spec))
        fh.write("\n")


def load_spec(path) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
