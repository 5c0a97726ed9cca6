"""Shared layout of the per-frame parameter vector fed to the rasterizer
backends. Geometry and intensities are precomputed by the phantom model;
the kernels only evaluate arithmetic (ellipse membership, capsule distance)
per pixel."""

from __future__ import annotations

import enum


class P(enum.IntEnum):
    CX = 0
    CY = 1
    INV_AX_IN = 2
    INV_AY_IN = 3
    INV_AX_OUT = 4
    INV_AY_OUT = 5
    WALL_INT = 6
    POOL_INT = 7
    M_X1 = 8
    M_Y1 = 9
    M_X2 = 10
    M_Y2 = 11
    M_HALF_TH = 12
    M_INT = 13
    A_X1 = 14
    A_Y1 = 15
    A_X2 = 16
    A_Y2 = 17
    A_HALF_TH = 18
    A_INT = 19
    BACKGROUND = 20
    EDGE_GAIN = 21
    LEAF_SLOPE = 22


N_PARAMS = len(P)
