"""Hot loops, compiled with Cython when available.

The compiled module is picked at import; set ``MMOT_KERNELS=python`` to force
the numpy fallback.  ``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels

python_kernels = _pykernels

try:
    if os.environ.get("MMOT_KERNELS", "").lower() == "python":
        raise ImportError("compiled kernels disabled by MMOT_KERNELS")
    from . import _ckernels as _active

    compiled_kernels = _active
    BACKEND = "cython"
except ImportError:
    _active = _pykernels
    compiled_kernels = None
    BACKEND = "python"

tuple_min = _active.tuple_min
window_mass_1d = _active.window_mass_1d

__all__ = ["BACKEND", "tuple_min", "window_mass_1d", "python_kernels", "compiled_kernels"]
