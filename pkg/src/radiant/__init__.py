"""Collective spontaneous emission of singly excited atomic arrays and vapors."""

from __future__ import annotations

__version__ = "0.1.0"

from .coupling import CouplingMatrix, PhysicalParams, coupling_ensemble, coupling_fixed, gamma_bar
from .emission import (
    AngularDistribution,
    BraggDecomposition,
    angular_distribution_exact,
    angular_distribution_planewave,
    beam_width,
    bragg_decompose,
    cap_probability,
    photon_mode,
    predict_1d,
    predict_3d,
    propagation_validity,
)
from .ensemble import mixed_photon_state, purity, slow_motion_average
from .errors import ConfigError, GeometryError, NumericalError, RadiantError
from .geometry import AtomArray, EnsembleSpec, LatticeSpec, build_lattice, sample_ensemble_positions
from .modes import ModeDecomposition, diagonalize, label_modes
from .quadrature import AngularGrid

__all__ = [
    "AngularDistribution", "AngularGrid", "AtomArray", "BraggDecomposition", "ConfigError",
    "CouplingMatrix", "EnsembleSpec", "GeometryError", "LatticeSpec", "ModeDecomposition",
    "NumericalError", "PhysicalParams", "RadiantError", "angular_distribution_exact",
    "angular_distribution_planewave", "beam_width", "bragg_decompose", "build_lattice",
    "cap_probability", "coupling_ensemble", "coupling_fixed", "diagonalize", "gamma_bar",
    "label_modes", "mixed_photon_state", "photon_mode", "predict_1d", "predict_3d",
    "propagation_validity", "purity", "sample_ensemble_positions", "slow_motion_average",
    "__version__",
]
