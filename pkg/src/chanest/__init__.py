"""Dual-polarized MIMO channel synthesis, SMC/DMC estimation and characterization."""
from .arrays import ArrayModel, ElementPattern, build_uca, build_upa, half_wavelength, response_matrix
from .channel import ChannelTensor, DmcDelayProcess, DmcModel, FrequencyGrid, SmcPath, VmfComponent
from .dmc import DmcDelayEstimator, DmcEstimator, VmfAngularEstimator, fit_dmc_delay
from .errors import (
    ChanestError, ConfigError, ContainerFormatError, InvalidArgumentError, NotFittedError, NumericalError,
)
from .io import load_config, read_container, write_container
from .mimo import ChannelNormalizer, bartlett_spectrum, capacity, normalize_channel, singular_values
from .smc import SageConfig, SageEstimator, estimate_smc
from .synthesis import synth_dmc, synth_full, synth_smc

__version__ = "0.1.0"

__all__ = [
    "ArrayModel", "ChanestError", "ChannelNormalizer", "ChannelTensor", "ConfigError",
    "ContainerFormatError", "DmcDelayEstimator", "DmcDelayProcess", "DmcEstimator", "DmcModel",
    "ElementPattern", "FrequencyGrid", "InvalidArgumentError", "NotFittedError", "NumericalError",
    "SageConfig", "SageEstimator", "SmcPath", "VmfAngularEstimator", "VmfComponent",
    "bartlett_spectrum", "build_uca", "build_upa", "capacity", "estimate_smc", "fit_dmc_delay",
    "half_wavelength", "load_config", "normalize_channel", "read_container", "response_matrix",
    "singular_values", "synth_dmc", "synth_full", "synth_smc", "write_container",
]
