"""Heat semigroups, energy measures and Widder decompositions on finite
weighted graphs."""

import os

# LAB_THREADS caps BLAS threading; it must be set before numpy loads
_threads = os.environ.get("LAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .errors import (DecompositionFailed, ExtensionRefused, InsufficientData,  # noqa: E402
                     InvalidAction, InvalidBall, InvalidCutoff, InvalidExhaustion,
                     InvalidGeometry, InvalidInput, InvalidTime, InvalidWindow, LabError,
                     NotApplicable)
from .semigroup import AtomicMeasure, HeatEngine  # noqa: E402
from .solutions import SpaceTimeFunction  # noqa: E402
from .space import (DirichletSpace, Exhaustion, Subdomain, build_cycle,  # noqa: E402
                    build_grid_2d, build_path, build_random, restrict)
from .widder import WidderDecomposition  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "AtomicMeasure", "DecompositionFailed", "DirichletSpace", "Exhaustion",
    "ExtensionRefused", "HeatEngine", "InsufficientData", "InvalidAction",
    "InvalidBall", "InvalidCutoff", "InvalidExhaustion", "InvalidGeometry",
    "InvalidInput", "InvalidTime", "InvalidWindow", "LabError", "NotApplicable",
    "SpaceTimeFunction", "Subdomain", "WidderDecomposition", "build_cycle",
    "build_grid_2d", "build_path", "build_random", "restrict",
]
