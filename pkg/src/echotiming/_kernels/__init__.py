"""Rasterizer backend selection.

The compiled Cython kernel is preferred when built; otherwise the numpy
fallback is used. Set ECHOTIMING_RENDER_BACKEND=numpy|cython to force one
(useful for benchmarks and for verifying the backends agree).
"""

from __future__ import annotations

import os

from .params import N_PARAMS, P

__all__ = ["render_sequence", "ACTIVE_BACKEND", "available_backends", "get_backend", "N_PARAMS", "P"]

from . import render_np

_backends = {"numpy": render_np}
try:
    from . import _render_cy

    _backends["cython"] = _render_cy
except ImportError:
    _render_cy = None


def available_backends() -> list[str]:
    return sorted(_backends)


def get_backend(name: str):
    """Module implementing `render_sequence` for an explicitly named backend."""
    try:
        return _backends[name]
    except KeyError:
        raise ValueError(f"unknown or unbuilt render backend '{name}' (have {available_backends()})") from None


_forced = os.environ.get("ECHOTIMING_RENDER_BACKEND", "").strip().lower()
if _forced:
    _active = get_backend(_forced)
elif _render_cy is not None:
    _active = _render_cy
else:
    _active = render_np

ACTIVE_BACKEND: str = _active.BACKEND_NAME
render_sequence = _active.render_sequence
