"""Kernel instrumental-variable regression by maximum moment restriction.

Submodules: ``kernels``, ``risk``, ``rkhs``, ``nystrom``, ``selection``,
``nn``, ``baselines``, ``datagen``, ``diagnostics`` and ``harness``.
"""

from .errors import ConfigError, DivergenceError, InputError, NumericalError
from .kernels import KernelSpec
from .risk import Dataset

__version__ = "0.1.0"

__all__ = ["ConfigError", "Dataset", "DivergenceError", "InputError", "KernelSpec", "NumericalError"]
