"""Adaptive Haar-wavelet and filtered P_N angular discretisations for 2D
steady transport, with ray-effect-robust goal-based angular adaptivity."""

from .adapt_driver import AdaptConfig, AdaptRecord, run
from .haar import AngleMap, Forest
from .harmonics import FpnConfig
from .mesh import Material, TriMesh, generate_duct
from .transport import FpnDiscretisation, HaarDiscretisation, SolveOptions, solve

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "AdaptRecord",
    "AngleMap",
    "Forest",
    "FpnConfig",
    "FpnDiscretisation",
    "HaarDiscretisation",
    "Material",
    "SolveOptions",
    "TriMesh",
    "generate_duct",
    "run",
    "solve",
]
