"""Rollout backend selection.

The compiled Cython kernel is preferred; the numpy implementation is used
when the extension was not built. ``TMPC_BACKEND`` (``cython``/``python``)
overrides the default.
"""
from __future__ import annotations

import os

from . import _fallback
from .errors import ConfigError

try:
    from . import _compiled
except ImportError:  # extension not built
    _compiled = None

AVAILABLE = {"python": _fallback}
if _compiled is not None:
    AVAILABLE["cython"] = _compiled

DEFAULT = "cython" if _compiled is not None else "python"


def get(name=None):
    """Backend module by name; ``None`` means ``$TMPC_BACKEND`` or the default."""
    if name is None:
        name = os.environ.get("TMPC_BACKEND") or DEFAULT
    if hasattr(name, "rollout_costs"):
        return name
    name = str(name).lower()
    if name not in ("python", "cython"):
        raise ConfigError("backend invalid", [f"backend={name!r} must be 'cython' or 'python'"])
    if name not in AVAILABLE:
        raise ConfigError("backend unavailable", ["the compiled extension tmpc._kernels is not built"])
    return AVAILABLE[name]
