"""Hot numerical kernels with a compiled fast path.

The Cython extension is optional; the numpy fallback is selected when it
is missing or when SPECBAR_PURE_PYTHON is set in the environment.
"""

from __future__ import annotations

import os

if os.environ.get("SPECBAR_PURE_PYTHON"):
    from . import _slow as _impl

    HAVE_COMPILED = False
else:
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]

        HAVE_COMPILED = True
    except ImportError:
        from . import _slow as _impl

        HAVE_COMPILED = False

vp_lattice_sum = _impl.vp_lattice_sum
trig_features = _impl.trig_features

__all__ = ["vp_lattice_sum", "trig_features", "HAVE_COMPILED"]
