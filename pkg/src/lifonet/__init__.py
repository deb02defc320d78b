"""Simulation of multiclass queueing networks under LIFO and related disciplines."""

from .model import (
    Discipline,
    NetworkSpec,
    SpecError,
    build_fig1,
    build_fig2,
    stage_count,
    stage_expand,
    traffic,
)
from .stochastics import NuLaw, NuParams, SolverError, solve_nu_params

__version__ = "0.1.0"

__all__ = [
    "Discipline",
    "NetworkSpec",
    "NuLaw",
    "NuParams",
    "SolverError",
    "SpecError",
    "build_fig1",
    "build_fig2",
    "solve_nu_params",
    "stage_count",
    "stage_expand",
    "traffic",
    "__version__",
]
