"""Kernel dispatch: compiled extension if importable, numpy fallback otherwise.

Set ``BUNDLEMART_PURE=1`` to force the numpy implementations.
"""
from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("BUNDLEMART_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

sphere_euler = _impl.sphere_euler
torus_couple = _impl.torus_couple
flat_walk = _pykernels.flat_walk

__all__ = ["BACKEND", "sphere_euler", "torus_couple", "flat_walk"]
