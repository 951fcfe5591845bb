"""Koopman kernel regression: LTI predictors learned from trajectory data."""

__version__ = "0.1.0"

from ._backend import NAME as BACKEND
from .dynamics import (
    Dataset,
    ObservableSpec,
    SystemSpec,
    Trajectory,
    bistable,
    integrate,
    load_csv,
    sample_dataset,
    save_csv,
    vanderpol,
)
from .edmd import EDMDModel, fit_pcr, make_pairs
from .kernels import BaseKernel, KoopmanGram, assemble_gram, koopman_kernel
from .model import KKRConfig, KKRModel, fit, forecast, linearity_check
from .spectra import Spectrum, sample_conjugate_pairs, sample_structured, sample_uniform_disk

__all__ = [
    "BACKEND",
    "BaseKernel",
    "Dataset",
    "EDMDModel",
    "KKRConfig",
    "KKRModel",
    "KoopmanGram",
    "ObservableSpec",
    "Spectrum",
    "SystemSpec",
    "Trajectory",
    "assemble_gram",
    "bistable",
    "fit",
    "fit_pcr",
    "forecast",
    "integrate",
    "koopman_kernel",
    "linearity_check",
    "load_csv",
    "make_pairs",
    "sample_conjugate_pairs",
    "sample_dataset",
    "sample_structured",
    "sample_uniform_disk",
    "save_csv",
    "vanderpol",
]
