"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  ``LANTNET_NUMBA=0`` forces the numpy
fallback; otherwise numba is used when it can be imported.  Both backends expose
the same functions with the same signatures and are checked against each other
in the test suite.
"""

import os

from . import _numpy

_flag = os.environ.get("LANTNET_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no", "off")

BACKEND = "numpy"
_impl = _numpy
if _want_numba:
    try:
        from . import _numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass
    else:
        _impl = _numba
        BACKEND = "numba"

im2col = _impl.im2col
col2im = _impl.col2im
gather_patches = _impl.gather_patches
fcm_step = _impl.fcm_step
fcm_memberships = _impl.fcm_memberships

__all__ = ["BACKEND", "im2col", "col2im", "gather_patches", "fcm_step", "fcm_memberships"]
