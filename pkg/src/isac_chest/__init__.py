"""Sensing-assisted LMMSE channel estimation for bistatic ISAC OFDM links."""

from .grid import (
    ConfigurationError,
    DmrsPattern,
    OfdmConfig,
    PathSet,
    dmrs_pattern,
    gen_cfr,
    gen_random_paths,
    transmit,
)
from .sensing import SensingConfig, SensingEstimate, sense
from .correlation import ToleranceRecord, build_full_2d, build_separable
from .estimators import (
    LmmseCoefficients,
    NumericalError,
    SensingAssistedEstimator,
    lmmse_coeffs,
)
from .analysis import PsdSupport, nmse_lower_bound, nmse_psd, nmse_theorem1

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DmrsPattern", "OfdmConfig", "PathSet", "dmrs_pattern",
    "gen_cfr", "gen_random_paths", "transmit", "SensingConfig", "SensingEstimate",
    "sense", "ToleranceRecord", "build_full_2d", "build_separable",
    "LmmseCoefficients", "NumericalError", "SensingAssistedEstimator", "lmmse_coeffs",
    "PsdSupport", "nmse_lower_bound", "nmse_psd", "nmse_theorem1",
]
