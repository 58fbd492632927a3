"""Kernel selection: compiled extension when available, numpy otherwise.

Set GRIDCASCADE_PURE_PYTHON=1 to force the numpy path. Both backends share
the same signatures and are cross-checked in the test suite.
"""

import os

from . import _kernels_py

BACKEND = "numpy"
calc_injections = _kernels_py.calc_injections
calc_jacobian = _kernels_py.calc_jacobian

if os.environ.get("GRIDCASCADE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_cy

        calc_injections = _kernels_cy.calc_injections
        calc_jacobian = _kernels_cy.calc_jacobian
        BACKEND = "compiled"
    except ImportError:
        pass
