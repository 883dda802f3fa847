"""Error rates of on-off FSK with L receive antennas over Rician fading."""

from .analytic import (
    ChannelEnergy,
    pc0,
    pc1_coherent_series,
    pc1_direct_quadrature,
    pc1_noncoherent_quadrature,
    pc1_noncoherent_series,
    pe_average_coherent,
    pe_conditional_coherent,
    pe_noncoherent,
    prior_error_floor,
)
from .channel import AntennaChannelSpec, Correlation, ErrorStats, ModulationSpec, run_monte_carlo
from .detector import DetectionParams, Scenario, detect, threshold_coherent, threshold_noncoherent
from .errors import AnalyticScopeError, ChannelSpecError, ConvergenceError, DomainError, ManifestError, OofskError

__all__ = [
    "AnalyticScopeError",
    "AntennaChannelSpec",
    "ChannelEnergy",
    "ChannelSpecError",
    "ConvergenceError",
    "Correlation",
    "DetectionParams",
    "DomainError",
    "ErrorStats",
    "ManifestError",
    "ModulationSpec",
    "OofskError",
    "Scenario",
    "detect",
    "pc0",
    "pc1_coherent_series",
    "pc1_direct_quadrature",
    "pc1_noncoherent_quadrature",
    "pc1_noncoherent_series",
    "pe_average_coherent",
    "pe_conditional_coherent",
    "pe_noncoherent",
    "prior_error_floor",
    "run_monte_carlo",
    "threshold_coherent",
    "threshold_noncoherent",
]
