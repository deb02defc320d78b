"""Interarrival and service-time laws, the nu-law solver, and seeded streams.

The interarrival law ``nu(M)`` mixes an atom of mass ``1 - 1/M`` at ``1/M**2``
with an exponential density ``(1/M) exp(-beta (t - gamma M))`` on
``[gamma M, 2M]``.  ``beta`` and ``gamma`` are fixed by requiring total mass
one and mean one; :func:`solve_nu_params` finds them with a damped Newton
iteration on closed-form moments.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "NuParams",
    "NuLaw",
    "Deterministic",
    "Exponential",
    "ErlangMixture",
    "RngStream",
    "SolverError",
    "solve_nu_params",
    "nu_moments",
    "sample_interarrival",
    "sample_interarrivals",
    "sample_service",
    "law_mean",
    "validate_arrival_conditions",
    "ArrivalConditions",
]


class SolverError(RuntimeError):
    """Raised when the nu-law solver fails to converge.

    Carries the last iterate and both constraint residuals.
    """

    def __init__(self, message, beta, gamma, mass_residual, mean_residual):
        super().__init__(message)
        self.beta = beta
        self.gamma = gamma
        self.mass_residual = mass_residual
        self.mean_residual = mean_residual


# ---------------------------------------------------------------------------
# Laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    mean: float

    def __post_init__(self):
        if not self.mean > 0:
            raise ValueError(f"deterministic mean must be positive, got {self.mean}")


@dataclass(frozen=True)
class Exponential:
    mean: float

    def __post_init__(self):
        if not self.mean > 0:
            raise ValueError(f"exponential mean must be positive, got {self.mean}")


@dataclass(frozen=True)
class ErlangMixture:
    """Mixture of Erlang laws.

    ``components`` holds ``(weight, stages, stage_mean)`` triples; a draw picks
    a component by weight and sums ``stages`` exponentials of mean
    ``stage_mean``.
    """

    components: tuple[tuple[float, int, float], ...]

    def __post_init__(self):
        comps = tuple((float(w), int(k), float(m)) for w, k, m in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("Erlang mixture needs at least one component")
        if any(w < 0 for w, _, _ in comps):
            raise ValueError("mixture weights must be nonnegative")
        if abs(sum(w for w, _, _ in comps) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if any(k < 1 or not m > 0 for _, k, m in comps):
            raise ValueError("stage counts must be >= 1 and stage means positive")

    @classmethod
    def erlang(cls, stages: int, mean: float) -> "ErlangMixture":
        """Single Erlang law with the given total mean."""
        return cls(((1.0, stages, mean / stages),))

    @property
    def mean(self) -> float:
        return sum(w * k * m for w, k, m in self.components)


@dataclass(frozen=True)
class NuParams:
    """Solved parameters of the nu(M) interarrival law."""

    M: float
    beta: float
    gamma: float
    mass_residual: float = 0.0
    mean_residual: float = 0.0
    iterations: int = field(default=0, compare=False)

    @property
    def atom(self) -> float:
        return 1.0 / self.M**2

    @property
    def atom_mass(self) -> float:
        return 1.0 - 1.0 / self.M

    @property
    def lower(self) -> float:
        """Left end ``gamma M`` of the continuous support."""
        return self.gamma * self.M

    @property
    def upper(self) -> float:
        return 2.0 * self.M

    def density(self, t):
        """Density of the continuous part (mass ``1/M`` in total)."""
        t = np.asarray(t, dtype=float)
        inside = (t >= self.lower) & (t <= self.upper)
        return np.where(inside, np.exp(-self.beta * (t - self.lower)) / self.M, 0.0)

    def to_record(self) -> dict:
        return {
            "M": self.M,
            "beta": self.beta,
            "gamma": self.gamma,
            "mass_residual": self.mass_residual,
            "mean_residual": self.mean_residual,
        }


@dataclass(frozen=True)
class NuLaw:
    """The nu(M) renewal law, carried as solved parameters."""

    params: NuParams

    @classmethod
    def from_M(cls, M: float) -> "NuLaw":
        return cls(solve_nu_params(M))

    @property
    def mean(self) -> int:
        return 1


def law_mean(law) -> float:
    return float(law.mean)


# ---------------------------------------------------------------------------
# nu solver
# ---------------------------------------------------------------------------


def nu_moments(M: float, beta: float, gamma: float) -> tuple[float, float]:
    """Closed-form total mass and mean of nu for given ``(beta, gamma)``."""
    span = M * (2.0 - gamma)
    tail = math.exp(-beta * span)
    cont_mass = -math.expm1(-beta * span) / beta
    mass = (1.0 - 1.0 / M) + cont_mass / M
    # integral of (gamma M + u) e^{-beta u} over [0, span], divided by M
    first = (1.0 - tail * (1.0 + beta * span)) / beta**2
    mean = (1.0 - 1.0 / M) / M**2 + (gamma * M * cont_mass + first) / M
    return mass, mean


def _residuals_and_jacobian(M, beta, gamma):
    span = M * (2.0 - gamma)
    tail = math.exp(-beta * span)
    one_minus = -math.expm1(-beta * span)
    g = 1.0 - tail - tail * beta * span
    f1 = one_minus / beta - 1.0
    integral = gamma * M * one_minus / beta + g / beta**2
    f2 = (1.0 - 1.0 / M) / M**2 + integral / M - 1.0

    d1_db = span * tail / beta - one_minus / beta**2
    d1_dg = -M * tail
    di_db = gamma * M * d1_db + span**2 * tail / beta - 2.0 * g / beta**3
    di_dg = M * one_minus / beta - gamma * M**2 * tail - span * M * tail
    jac = np.array([[d1_db, d1_dg], [di_db / M, di_dg / M]])
    return np.array([f1, f2]), jac


def _bisection_solve(M, tol):
    """Fallback: bisection on gamma with an inner scalar solve for beta."""

    def beta_for(gamma):
        span = M * (2.0 - gamma)
        lo, hi = 1e-12, 1.0
        # (1 - e^{-b span}) / b is decreasing in b; root where it equals 1
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if -math.expm1(-mid * span) / mid > 1.0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def mean_gap(gamma):
        return nu_moments(M, beta_for(gamma), gamma)[1] - 1.0

    lo, hi = 0.0, 1.0
    f_lo = mean_gap(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = mean_gap(mid)
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo < tol * 1e-3:
            break
    gamma = 0.5 * (lo + hi)
    return beta_for(gamma), gamma


def solve_nu_params(M: float, tol: float = 1e-12, max_iter: int = 100) -> NuParams:
    """Solve for ``(beta, gamma)`` so that nu(M) has unit mass and unit mean.

    Damped 2-D Newton from ``(1, 1 - 1/M)`` with an analytic Jacobian; falls
    back to nested bisection if Newton stalls.

    Raises
    ------
    ValueError
        If ``M <= 4``.
    SolverError
        If neither method brings both residuals below ``tol``.
    """
    M = float(M)
    if not M > 4:
        raise ValueError(f"nu(M) requires M > 4, got {M}")

    x = np.array([1.0, 1.0 - 1.0 / M])
    res, jac = _residuals_and_jacobian(M, *x)
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(res)) <= tol:
            break
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            break
        norm = np.max(np.abs(res))
        lam = 1.0
        while lam > 1e-8:
            cand = x + lam * step
            if cand[0] > 0 and 0 < cand[1] < 2:
                cres, cjac = _residuals_and_jacobian(M, *cand)
                if np.max(np.abs(cres)) < norm:
                    break
            lam *= 0.5
        else:
            break
        x, res, jac = cand, cres, cjac

    beta, gamma = float(x[0]), float(x[1])
    mass, mean = nu_moments(M, beta, gamma)
    if max(abs(mass - 1.0), abs(mean - 1.0)) > tol:
        beta, gamma = _bisection_solve(M, tol)
        mass, mean = nu_moments(M, beta, gamma)
        if max(abs(mass - 1.0), abs(mean - 1.0)) > 10 * tol:
            raise SolverError(
                f"nu solver did not converge for M={M}",
                beta,
                gamma,
                mass - 1.0,
                mean - 1.0,
            )
    return NuParams(M, beta, gamma, mass - 1.0, mean - 1.0, it)


# ---------------------------------------------------------------------------
# Streams
# ---------------------------------------------------------------------------


def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key integers must be nonnegative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


class RngStream:
    """Hierarchically keyed random stream.

    ``RngStream(seed, key)`` is backed by ``numpy``'s ``SeedSequence`` with
    ``spawn_key`` derived from ``key``; integers are used as is and strings
    through CRC-32, so the same ``(seed, key)`` always gives the same
    variates.
    """

    def __init__(self, seed: int, key: Sequence = ()):
        self.seed = int(seed)
        self.key = tuple(key)
        self._seq = np.random.SeedSequence(self.seed, spawn_key=tuple(_key_int(k) for k in self.key))
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, *key) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def random(self, size=None):
        return self.generator.random(size)

    def standard_exponential(self, size=None):
        return self.generator.standard_exponential(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key!r})"


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_interarrival(p: NuParams, stream) -> float:
    """One draw from nu(M).

    The atom branch returns exactly ``1/M**2``.  The continuous branch draws
    ``gamma M + E/beta`` and redraws ``E`` whenever the result passes ``2M``.
    """
    if stream.random() < 1.0 - 1.0 / p.M:
        return 1.0 / p.M**2
    lower = p.gamma * p.M
    upper = 2.0 * p.M
    while True:
        t = lower + stream.standard_exponential() / p.beta
        if t <= upper:
            return t


def sample_interarrivals(p: NuParams, stream, size: int) -> np.ndarray:
    """Vectorized nu(M) sampler with the same branch rule."""
    u = stream.random(size)
    out = np.full(size, 1.0 / p.M**2)
    cont = np.flatnonzero(u >= 1.0 - 1.0 / p.M)
    lower = p.gamma * p.M
    upper = 2.0 * p.M
    todo = cont
    while todo.size:
        t = lower + stream.standard_exponential(todo.size) / p.beta
        ok = t <= upper
        out[todo[ok]] = t[ok]
        todo = todo[~ok]
    return out


def sample_service(law, stream) -> float:
    if isinstance(law, Deterministic):
        return law.mean
    if isinstance(law, Exponential):
        return law.mean * stream.standard_exponential()
    if isinstance(law, ErlangMixture):
        comps = law.components
        idx = len(comps) - 1
        if len(comps) > 1:
            u = stream.random()
            acc = 0.0
            for i, (w, _, _) in enumerate(comps):
                acc += w
                if u < acc:
                    idx = i
                    break
        _, k, m = comps[idx]
        total = 0.0
        for _ in range(k):
            total += m * stream.standard_exponential()
        return total
    if isinstance(law, NuLaw):
        return sample_interarrival(law.params, stream)
    raise TypeError(f"unsupported law {law!r}")


@dataclass(frozen=True)
class ArrivalConditions:
    unbounded: bool
    density_component: bool
    note: str = ""


def validate_arrival_conditions(law) -> ArrivalConditions:
    """Report unbounded support and presence of an absolutely continuous part.

    Informational only; nu(M) is bounded by ``2M`` and so fails the
    unboundedness condition used for the HLPPS/PS stability comparison.
    """
    if isinstance(law, NuLaw):
        return ArrivalConditions(False, True, "support is [gamma M, 2M] plus an atom at 1/M^2")
    if isinstance(law, Exponential):
        return ArrivalConditions(True, True)
    if isinstance(law, ErlangMixture):
        return ArrivalConditions(True, True)
    if isinstance(law, Deterministic):
        return ArrivalConditions(False, False, "point mass")
    raise TypeError(f"unsupported law {law!r}")
