"""Sweep kernel selection: compiled extension when available, numpy fallback
otherwise.  Set DUALRETIRE_PURE_PYTHON=1 to force the fallback."""

import os

from . import _sweep_py

sweep_color_py = _sweep_py.sweep_color

if os.environ.get("DUALRETIRE_PURE_PYTHON") == "1":
    _cy = None
else:
    try:
        from . import _sweep_cy as _cy
    except ImportError:
        _cy = None

HAVE_COMPILED = _cy is not None
BACKEND = "compiled" if HAVE_COMPILED else "python"
sweep_color_cy = _cy.sweep_color if HAVE_COMPILED else None
sweep_color = sweep_color_cy if HAVE_COMPILED else sweep_color_py

__all__ = [
    "BACKEND",
    "HAVE_COMPILED",
    "sweep_color",
    "sweep_color_cy",
    "sweep_color_py",
]
