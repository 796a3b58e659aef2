"""Kernel selection: compiled extension when importable, numpy fallback otherwise.

``CGGM_MIX_BACKEND`` may be set to ``python`` or ``compiled`` to force a choice.
"""
import os
import warnings

from . import _kernels_py as py
from ._kernels_py import (STATUS_GRAD, STATUS_LINESEARCH, STATUS_MAXITER,  # noqa: F401
                          STATUS_NOT_PD, STATUS_OBJ)

STATUS_NAMES = {
    STATUS_GRAD: "grad_tol",
    STATUS_OBJ: "obj_tol",
    STATUS_MAXITER: "max_iters",
    STATUS_LINESEARCH: "line_search_failed",
    STATUS_NOT_PD: "not_pd",
}

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

_choice = os.environ.get("CGGM_MIX_BACKEND", "").lower()
if _choice == "python":
    active = py
elif _choice == "compiled":
    if compiled is None:
        raise ImportError("CGGM_MIX_BACKEND=compiled but the extension is not built")
    active = compiled
else:
    if _choice:
        warnings.warn(f"unknown CGGM_MIX_BACKEND={_choice!r}; using the default backend")
    active = compiled if compiled is not None else py

name = "compiled" if active is compiled else "python"


def get(which=None):
    """Kernel module for ``which`` in {None, 'python', 'compiled'}."""
    if which is None:
        return active
    if which == "python":
        return py
    if which == "compiled":
        if compiled is None:
            raise ImportError("compiled kernels are not available")
        return compiled
    raise ValueError(f"unknown backend {which!r}")
