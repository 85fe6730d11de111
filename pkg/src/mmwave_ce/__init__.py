"""Channel simulation, sounding design and subspace channel estimation for
wideband mmWave multi-user MIMO."""

from .beam_design import SoundingDesign, build_designs
from .channel import ChannelRealization, generate_realization
from .config import SystemConfig
from .ems import estimate_ems
from .experiment import ExperimentSpec, ResultRecord, run_experiment
from .metrics import nmse, spectral_efficiency
from .omp import omp_estimate
from .sounding import MeasurementSet, simulate_measurements
from .tde import ChannelEstimate, estimate_tde

__all__ = [
    "ChannelEstimate", "ChannelRealization", "ExperimentSpec", "MeasurementSet", "ResultRecord",
    "SoundingDesign", "SystemConfig", "build_designs", "estimate_ems", "estimate_tde",
    "generate_realization", "nmse", "omp_estimate", "run_experiment", "simulate_measurements",
    "spectral_efficiency",
]
__version__ = "0.1.0"
