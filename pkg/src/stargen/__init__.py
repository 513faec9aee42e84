"""stargen: single generators for truncated inductive limit algebras.

Builds finite stages of diagonal-map inductive systems, synthesizes an
explicit single generator for the truncated algebra, and verifies the
construction numerically.
"""

import os as _os

# Pin BLAS thread pools before numpy loads anywhere in the package.
# STARGEN_THREADS only seeds the standard variables; explicit user settings
# always win.
_threads = _os.environ.get("STARGEN_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .tolerances import Tolerances, DEFAULT  # noqa: E402
from .elements import (  # noqa: E402
    AlgebraShape, BlockShape, Element, canonical_unit, hs_inner, hs_norm,
)
from . import errors  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Tolerances", "DEFAULT",
    "AlgebraShape", "BlockShape", "Element",
    "canonical_unit", "hs_inner", "hs_norm",
    "errors",
    "__version__",
]
