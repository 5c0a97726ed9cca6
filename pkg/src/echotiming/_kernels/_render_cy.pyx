# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled phantom rasterizer. Mirrors render_np.py expression-for-expression;
built with -ffp-contract=off so both backends produce identical float64 output."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

from .params import N_PARAMS

cnp.import_array()

BACKEND_NAME = "cython"

# Indices must match params.P.
DEF I_CX = 0
DEF I_CY = 1
DEF I_INV_AX_IN = 2
DEF I_INV_AY_IN = 3
DEF I_INV_AX_OUT = 4
DEF I_INV_AY_OUT = 5
DEF I_WALL_INT = 6
DEF I_POOL_INT = 7
DEF I_M_X1 = 8
DEF I_M_Y1 = 9
DEF I_M_X2 = 10
DEF I_M_Y2 = 11
DEF I_M_HALF_TH = 12
DEF I_M_INT = 13
DEF I_A_X1 = 14
DEF I_A_Y1 = 15
DEF I_A_X2 = 16
DEF I_A_Y2 = 17
DEF I_A_HALF_TH = 18
DEF I_A_INT = 19
DEF I_BACKGROUND = 20
DEF I_EDGE_GAIN = 21
DEF I_LEAF_SLOPE = 22


cdef inline double _clip01(double v) nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


cdef void _render_frame(const double[::1] p, double[:, ::1] out, int height, int width) nogil:
    cdef int y, x
    cdef double px, py, dxo, dyo, dxi, dyi, m_out, m_in, v
    cdef double gain = p[I_EDGE_GAIN]
    cdef double slope = p[I_LEAF_SLOPE]
    cdef double mex = p[I_M_X2] - p[I_M_X1]
    cdef double mey = p[I_M_Y2] - p[I_M_Y1]
    cdef double ml2 = mex * mex + mey * mey
    cdef double m_invl2 = 1.0 / ml2 if ml2 > 0.0 else 0.0
    cdef double aex = p[I_A_X2] - p[I_A_X1]
    cdef double aey = p[I_A_Y2] - p[I_A_Y1]
    cdef double al2 = aex * aex + aey * aey
    cdef double a_invl2 = 1.0 / al2 if al2 > 0.0 else 0.0
    cdef double dx, dy, t, qx, qy, dist, lv
    for y in range(height):
        py = <double>y
        for x in range(width):
            px = <double>x
            dxo = (px - p[I_CX]) * p[I_INV_AX_OUT]
            dyo = (py - p[I_CY]) * p[I_INV_AY_OUT]
            m_out = _clip01((1.0 - dxo * dxo - dyo * dyo) * gain)
            dxi = (px - p[I_CX]) * p[I_INV_AX_IN]
            dyi = (py - p[I_CY]) * p[I_INV_AY_IN]
            m_in = _clip01((1.0 - dxi * dxi - dyi * dyi) * gain)
            v = p[I_BACKGROUND] + (p[I_WALL_INT] - p[I_BACKGROUND]) * m_out + (p[I_POOL_INT] - p[I_WALL_INT]) * m_in
            if p[I_M_INT] > 0.0:
                dx = px - p[I_M_X1]
                dy = py - p[I_M_Y1]
                t = _clip01((dx * mex + dy * mey) * m_invl2)
                qx = dx - t * mex
                qy = dy - t * mey
                dist = sqrt(qx * qx + qy * qy)
                lv = _clip01((p[I_M_HALF_TH] - dist) * slope + 0.5) * p[I_M_INT]
                if lv > v:
                    v = lv
            if p[I_A_INT] > 0.0:
                dx = px - p[I_A_X1]
                dy = py - p[I_A_Y1]
                t = _clip01((dx * aex + dy * aey) * a_invl2)
                qx = dx - t * aex
                qy = dy - t * aey
                dist = sqrt(qx * qx + qy * qy)
                lv = _clip01((p[I_A_HALF_TH] - dist) * slope + 0.5) * p[I_A_INT]
                if lv > v:
                    v = lv
            out[y, x] = v


def render_sequence(params, int height, int width):
    """Rasterize one frame per parameter row; returns (T, height, width) float64."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] par = np.ascontiguousarray(params, dtype=np.float64)
    if par.shape[1] != N_PARAMS:
        raise ValueError(f"params must be (T, {N_PARAMS}), got ({par.shape[0]}, {par.shape[1]})")
    cdef int n = par.shape[0]
    cdef cnp.ndarray[double, ndim=3, mode="c"] out = np.empty((n, height, width), dtype=np.float64)
    cdef int t
    cdef double[:, ::1] frame
    cdef const double[::1] row
    for t in range(n):
        row = par[t]
        frame = out[t]
        _render_frame(row, frame, height, width)
    return np.asarray(out)
