"""Select the epoch kernel: compiled extension if importable, else numpy.

Set ``STRUCTNET_CE_BACKEND=python`` to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _reference

try:
    from . import _kernel as _compiled
except ImportError:  # extension not built
    _compiled = None


def available() -> dict:
    out = {"python": _reference}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def get(name: str | None = None):
    """Backend module by name (``"cython"`` or ``"python"``); ``None`` picks the default."""
    backends = available()
    if name is None:
        name = os.environ.get("STRUCTNET_CE_BACKEND", "").strip().lower() or None
    if name is None:
        return backends.get("cython", _reference)
    if name not in backends:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(backends)}")
    return backends[name]


def default_name() -> str:
    return get().NAME
