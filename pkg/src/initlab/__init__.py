"""Initialization strategies for transient bluff-body flow and their effect on time to statistical convergence."""

from .convergence import ConvergenceReport, FilteredSeries, convergence_time, running_median, to_ctu
from .grid import (
    Circle,
    FlowState,
    FreestreamConditions,
    Grid,
    GridSpec,
    ObstacleMask,
    Rectangle,
    apply_boundary_conditions,
    make_grid,
    rasterize_obstacle,
)
from .solver import ForceSeries, SolverConfig, run, step

__version__ = "0.1.0"

__all__ = [
    "Circle",
    "ConvergenceReport",
    "FilteredSeries",
    "FlowState",
    "ForceSeries",
    "FreestreamConditions",
    "Grid",
    "GridSpec",
    "ObstacleMask",
    "Rectangle",
    "SolverConfig",
    "apply_boundary_conditions",
    "convergence_time",
    "make_grid",
    "rasterize_obstacle",
    "run",
    "running_median",
    "step",
    "to_ctu",
]
