"""Pick the geometry kernel backend at import time.

``ACNN_BACKEND=python`` forces the numpy fallback, ``compiled`` requires the
Cython extension, anything else (default) prefers compiled when importable.
"""

import os

from . import _kernels_py

_choice = os.environ.get("ACNN_BACKEND", "auto").lower()

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _choice == "compiled" and _compiled is None:
    raise ImportError("ACNN_BACKEND=compiled but acnn._kernels is not built")

if _choice == "python" or _compiled is None:
    kernels = _kernels_py
    NAME = "python"
else:
    kernels = _compiled
    NAME = "compiled"

fallback = _kernels_py
compiled = _compiled
