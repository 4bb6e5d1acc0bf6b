"""Deterministic-equivalent spectra of the information-plus-noise model ``B + sigma W``.

The support, density and cluster masses of the deterministic equivalent, spiked-model
eigenvalue limits and edge expansions, and Monte Carlo checks of eigenvalue localization.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .exceptions import NumericalError, PoleProximityError, PreconditionError, ScenarioError, SpecmapError
from .kernel import SpectralRational, residue_table, zeros_one_minus_scf
from .model import EffectiveSpectrum, ModelSpec, effective_spectrum, load_scenario, parse_scenario
from .spiked import detect_Ks, edge_expansion, h_coeffs, predict_spikes, predicted_limit, psi
from .support import (
    SupportProfile,
    build_support,
    cluster_mass_closed_form,
    cluster_mass_quadrature,
    density,
    fixed_point_m,
    solve_w,
    stieltjes_m,
)

__all__ = [
    "__version__",
    "SpecmapError",
    "ScenarioError",
    "NumericalError",
    "PoleProximityError",
    "PreconditionError",
    "ModelSpec",
    "EffectiveSpectrum",
    "effective_spectrum",
    "load_scenario",
    "parse_scenario",
    "SpectralRational",
    "residue_table",
    "zeros_one_minus_scf",
    "SupportProfile",
    "build_support",
    "solve_w",
    "stieltjes_m",
    "fixed_point_m",
    "density",
    "cluster_mass_closed_form",
    "cluster_mass_quadrature",
    "detect_Ks",
    "psi",
    "predicted_limit",
    "h_coeffs",
    "edge_expansion",
    "predict_spikes",
]
