"""Hot convolution kernels with backend selection at import time.

The compiled Cython extension is preferred; a pure-numpy implementation is
the fallback.  Set ``ANONET_FORCE_PY=1`` to force the fallback (used by the
benchmark and by tests that compare the two backends).
"""

import os

from . import _convpy

if os.environ.get("ANONET_FORCE_PY") == "1":
    _backend = _convpy
    BACKEND = "python"
else:
    try:
        from . import _convext as _backend
        BACKEND = "cython"
    except ImportError:
        _backend = _convpy
        BACKEND = "python"

im2col = _backend.im2col
col2im = _backend.col2im

__all__ = ["im2col", "col2im", "BACKEND", "_convpy"]
