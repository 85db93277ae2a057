"""Spin-boson polarization and fidelity OTOC via TEMPO."""

from .bath import (
    GridParams,
    ModelParams,
    autocorrelation,
    eta_table,
    gamma_table,
    spectral_density,
)
from .fotoc import ProbeParams, extrema_locations, lyapunov_fit
from .tempo import TimeSeries, evolve
from .tensor_net import CompressionParams

__version__ = "0.1.0"

__all__ = [
    "GridParams",
    "ModelParams",
    "CompressionParams",
    "ProbeParams",
    "TimeSeries",
    "autocorrelation",
    "eta_table",
    "gamma_table",
    "spectral_density",
    "evolve",
    "extrema_locations",
    "lyapunov_fit",
    "__version__",
]
