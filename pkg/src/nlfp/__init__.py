"""Stationary states of nonlocal Fokker-Planck equations as fixed points ``T u = u``."""

from .grid import Axis, Field, GridSpec, integrate, norm, upsample
from .kernels import critical_kappas, fourier_mode, kernel_from_dict, sample
from .models import CS, MV1D, MV2D, NFP, McKeanVlasov, NonFiniteError
from .solver import GMRESConfig, NewtonConfig, NewtonResult, gmres_solve, newton_solve

__version__ = "0.1.0"

__all__ = [
    "Axis",
    "CS",
    "Field",
    "GMRESConfig",
    "GridSpec",
    "MV1D",
    "MV2D",
    "McKeanVlasov",
    "NFP",
    "NewtonConfig",
    "NewtonResult",
    "NonFiniteError",
    "critical_kappas",
    "fourier_mode",
    "gmres_solve",
    "integrate",
    "kernel_from_dict",
    "newton_solve",
    "norm",
    "sample",
    "upsample",
]
