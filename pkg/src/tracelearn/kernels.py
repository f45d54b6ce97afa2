"""Kernel selection: the compiled extension when it imports, else pure Python.

Set ``TRACELEARN_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
cost_to_go = _kernels_py.cost_to_go
rollout = _kernels_py.rollout

if os.environ.get("TRACELEARN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        cost_to_go = _compiled.cost_to_go
        rollout = _compiled.rollout
