"""Weak-anchoring Ginzburg-Landau lab for planar nematics on circular domains."""
from .geometry import GeometrySpec, PolarGrid, anchor_values, build_grid
from .energy import AnchoringParams, EnergyBreakdown, el_residual, energy, local_energy
from .vortex import BoundaryDefect, DefectSet, InteriorDefect, detect
from .field import OrderParameter, canonical_map, upper_bound_initializer
from .solver import SolveConfig, SolveReport, solve
from .renorm import minimize_w, w_interior, w_boundary
from .harness import ExperimentConfig, run_sweep, transition_probe, report

__all__ = [
    "GeometrySpec", "PolarGrid", "anchor_values", "build_grid",
    "AnchoringParams", "EnergyBreakdown", "el_residual", "energy", "local_energy",
    "BoundaryDefect", "DefectSet", "InteriorDefect", "detect",
    "OrderParameter", "canonical_map", "upper_bound_initializer",
    "SolveConfig", "SolveReport", "solve",
    "minimize_w", "w_interior", "w_boundary",
    "ExperimentConfig", "run_sweep", "transition_probe", "report",
]
