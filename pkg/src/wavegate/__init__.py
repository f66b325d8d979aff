"""Fully discrete P^k-LDG leapfrog scheme for the 1-D wave equation.

Dispersion analysis, trapped high-frequency wave packets, observability
constants of the fully discrete scheme and their recovery by spectral
filtering.
"""

__version__ = "0.1.0"

from .basis import LocalMatrices, SchemeParams, assemble_stiffness, flux_blocks, local_mass
from .errors import (CFLViolation, NumericalFailure, ParameterError, TrackingError,
                     UnobservableError, WavegateError)
from .evolve import (ObservationRegion, PeriodicMesh, RunResult, StatePair, energy, run, step)
from .gramian import (FilterSpec, ObservabilityReport, QuadraticPencil, build_pencil,
                      filtered_constant, fit_rate, observability_constant)
from .packets import PacketSpec, build_packet, gevrey_bump, trap_experiment
from .spectral import (DispersionTable, SymbolSample, cfl_margin, dispersion_table, eig_branches,
                       group_velocity, positive_band, symbol, temporal_frequency)

__all__ = [
    "CFLViolation", "DispersionTable", "FilterSpec", "LocalMatrices", "NumericalFailure",
    "ObservabilityReport", "ObservationRegion", "PacketSpec", "ParameterError", "PeriodicMesh",
    "QuadraticPencil", "RunResult", "SchemeParams", "StatePair", "SymbolSample", "TrackingError",
    "UnobservableError", "WavegateError", "assemble_stiffness", "build_packet", "build_pencil",
    "cfl_margin", "dispersion_table", "eig_branches", "energy", "filtered_constant", "fit_rate",
    "flux_blocks", "gevrey_bump", "group_velocity", "local_mass", "observability_constant",
    "positive_band", "run", "step", "symbol", "temporal_frequency", "trap_experiment",
]
