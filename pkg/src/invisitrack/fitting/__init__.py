from .energies import (
    CorrespondenceSet,
    DeformationState,
    EnergyTerm,
    MarkerObservationSet,
    build_correspondences,
    combine_energies,
    deform_point,
    energy_fit,
    energy_marker,
    energy_smooth,
    fit_block,
    marker_block,
    smooth_block,
)
from .graph import GraphNeighborhood, build_neighborhood, chain_neighborhood
from .so3 import hat, so3_exp, so3_log
from .solver import FitConfig, FitProblem, FitReport, fit_template, levenberg_marquardt, total_energy

__all__ = [
    "CorrespondenceSet",
    "DeformationState",
    "EnergyTerm",
    "FitConfig",
    "FitProblem",
    "FitReport",
    "GraphNeighborhood",
    "MarkerObservationSet",
    "build_correspondences",
    "build_neighborhood",
    "chain_neighborhood",
    "combine_energies",
    "deform_point",
    "energy_fit",
    "energy_marker",
    "energy_smooth",
    "fit_block",
    "fit_template",
    "hat",
    "levenberg_marquardt",
    "marker_block",
    "smooth_block",
    "so3_exp",
    "so3_log",
    "total_energy",
]
