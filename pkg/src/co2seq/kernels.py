"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``CO2SEQ_PURE_PYTHON=1``
to force the NumPy fallback (the test-suite runs both).
"""
import os

from . import _kernels_py

if os.environ.get("CO2SEQ_PURE_PYTHON", "") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

banded_ldl_factor = _impl.banded_ldl_factor
banded_ldl_solve = _impl.banded_ldl_solve
basis_funs_ders = _impl.basis_funs_ders
stencil_apply = _impl.stencil_apply
stencil_adjoint = _impl.stencil_adjoint

__all__ = [
    "BACKEND",
    "banded_ldl_factor",
    "banded_ldl_solve",
    "basis_funs_ders",
    "stencil_apply",
    "stencil_adjoint",
]
