"""Kernel selection: the compiled extension when it imports, else pure Python.

Set ``EDGEHARVEST_PURE=1`` to force the fallback.
"""
import os

from . import _pycore

BACKEND = "python"
gth_stationary = _pycore.gth_stationary
simulate = _pycore.simulate

if os.environ.get("EDGEHARVEST_PURE") != "1":
    try:
        from . import _core
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        gth_stationary = _core.gth_stationary
        simulate = _core.simulate

POLICY_CODES = {"uniform": _pycore.POLICY_UNIFORM, "long_term": _pycore.POLICY_LONG_TERM, "adaptive": _pycore.POLICY_ADAPTIVE}
