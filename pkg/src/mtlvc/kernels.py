"""Hot-loop kernels: compiled extension when available, Python otherwise.

Set ``MTLVC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("MTLVC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

segment_dp = _impl.segment_dp
edit_distance = _impl.edit_distance

__all__ = ["BACKEND", "segment_dp", "edit_distance"]
