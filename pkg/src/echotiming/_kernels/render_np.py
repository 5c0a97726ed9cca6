"""Pure-numpy phantom rasterizer, the fallback when the compiled kernel is
not built.

Keep every per-pixel expression in the same order as _render_cy.pyx: the two
backends are expected to produce bit-identical float64 output (the compiled
module is built with FMA contraction disabled for this reason).
"""

from __future__ import annotations

import numpy as np

from .params import N_PARAMS, P

BACKEND_NAME = "numpy"


def render_sequence(params: np.ndarray, height: int, width: int) -> np.ndarray:
    """Rasterize one frame per parameter row; returns (T, height, width) float64."""
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.ndim != 2 or params.shape[1] != N_PARAMS:
        raise ValueError(f"params must be (T, {N_PARAMS}), got {params.shape}")
    n = params.shape[0]
    out = np.empty((n, height, width), dtype=np.float64)
    X = np.arange(width, dtype=np.float64)[None, :]
    Y = np.arange(height, dtype=np.float64)[:, None]
    for t in range(n):
        out[t] = _render_frame(params[t], X, Y)
    return out


def _render_frame(p: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    gain = p[P.EDGE_GAIN]
    dxo = (X - p[P.CX]) * p[P.INV_AX_OUT]
    dyo = (Y - p[P.CY]) * p[P.INV_AY_OUT]
    m_out = np.clip((1.0 - dxo * dxo - dyo * dyo) * gain, 0.0, 1.0)
    dxi = (X - p[P.CX]) * p[P.INV_AX_IN]
    dyi = (Y - p[P.CY]) * p[P.INV_AY_IN]
    m_in = np.clip((1.0 - dxi * dxi - dyi * dyi) * gain, 0.0, 1.0)
    v = p[P.BACKGROUND] + (p[P.WALL_INT] - p[P.BACKGROUND]) * m_out + (p[P.POOL_INT] - p[P.WALL_INT]) * m_in
    v = _paint_leaflet(v, X, Y, p[P.M_X1], p[P.M_Y1], p[P.M_X2], p[P.M_Y2], p[P.M_HALF_TH], p[P.M_INT], p[P.LEAF_SLOPE])
    v = _paint_leaflet(v, X, Y, p[P.A_X1], p[P.A_Y1], p[P.A_X2], p[P.A_Y2], p[P.A_HALF_TH], p[P.A_INT], p[P.LEAF_SLOPE])
    return v


def _paint_leaflet(v, X, Y, x1, y1, x2, y2, half_th, intensity, slope):
    if intensity <= 0.0:
        return v
    ex = x2 - x1
    ey = y2 - y1
    l2 = ex * ex + ey * ey
    inv_l2 = 1.0 / l2 if l2 > 0.0 else 0.0
    dx = X - x1
    dy = Y - y1
    t = np.clip((dx * ex + dy * ey) * inv_l2, 0.0, 1.0)
    qx = dx - t * ex
    qy = dy - t * ey
    dist = np.sqrt(qx * qx + qy * qy)
    lv = np.clip((half_th - dist) * slope + 0.5, 0.0, 1.0) * intensity
    return np.maximum(v, lv)
