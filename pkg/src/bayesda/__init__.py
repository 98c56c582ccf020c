"""Bayesian data assimilation and inverse problems: filters, smoothers, samplers."""
from .core import (
    ConvergenceError,
    DimensionError,
    Gaussian,
    NotSPDError,
    NumericalError,
    RngStream,
    SpdMatrix,
    WeightCollapseError,
)
from .kalman import LinearModel
from .models import make_benchmark, simulate
from .sampling import WeightedEnsemble
from .variational import InverseProblem, NonlinearModel

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DimensionError",
    "Gaussian",
    "InverseProblem",
    "LinearModel",
    "NonlinearModel",
    "NotSPDError",
    "NumericalError",
    "RngStream",
    "SpdMatrix",
    "WeightCollapseError",
    "WeightedEnsemble",
    "make_benchmark",
    "simulate",
]
