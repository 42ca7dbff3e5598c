"""Kernel backend selection.

The compiled kernels are used when the extension is importable; otherwise
the pure-Python reference kernels are used.  Set ``COUNTBREAK_BACKEND`` to
``python`` or ``compiled`` to force a choice (forcing ``compiled`` raises
if the extension is missing).
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def load(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ("auto", "compiled", "python")."""
    choice = (name or os.environ.get("COUNTBREAK_BACKEND", "auto")).lower()
    if choice == "python":
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        if choice == "compiled":
            raise
        return _pykernels
    return _ckernels


kernels = load()
BACKEND: str = kernels.BACKEND
