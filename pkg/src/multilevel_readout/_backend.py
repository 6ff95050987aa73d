"""Select the compiled kernels when available, else the pure-Python mirror."""
import os

if os.environ.get("MULTILEVEL_READOUT_PURE_PYTHON") == "1":
    from . import _fallback as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        from . import _fallback as kernels

from . import _fallback as fallback

BACKEND = kernels.BACKEND

__all__ = ["kernels", "fallback", "BACKEND"]
