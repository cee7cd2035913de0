"""Vectorized red-black projected SOR half sweep (numpy fallback).

Must stay arithmetically identical to the compiled kernel: same neighbor
reads (all from ``prev``, with edge-clamped indices), same term order in the
stencil sum, same clamp order (gradient bound, then obstacle).
"""

from __future__ import annotations

import numpy as np


def sweep_color(phi, prev, coef, rhs, lower, scale, omega, color, use_obstacle, use_gradient):
    """Update the ``color`` nodes of interior rows of ``phi`` in place.

    ``prev`` must hold the pre-sweep state (the caller copies ``phi`` into it
    before each half sweep); neighbor values are read from ``prev`` only, so
    the result does not depend on update order.  Rows 0 and nz-1 are left to
    the caller.  Returns the largest scaled update among touched nodes.
    """
    nz, ny = phi.shape
    ip = np.minimum(np.arange(nz) + 1, nz - 1)
    im = np.maximum(np.arange(nz) - 1, 0)
    jp = np.minimum(np.arange(ny) + 1, ny - 1)
    jm = np.maximum(np.arange(ny) - 1, 0)

    s = rhs.copy()
    s += coef[1] * prev[ip, :]
    s += coef[2] * prev[im, :]
    s += coef[3] * prev[:, jp]
    s += coef[4] * prev[:, jm]
    s += coef[5] * prev[ip][:, jp]
    s += coef[6] * prev[im][:, jm]
    s += coef[7] * prev[ip][:, jm]
    s += coef[8] * prev[im][:, jp]
    gs = -s / coef[0]
    cand = prev + omega * (gs - prev)
    if use_gradient:
        cand = np.minimum(cand, prev[im, :])
    if use_obstacle:
        cand = np.maximum(cand, np.asarray(lower)[:, None])

    ii, jj = np.meshgrid(np.arange(nz), np.arange(ny), indexing="ij")
    mask = ((ii + jj) % 2 == color) & (ii >= 1) & (ii <= nz - 2)
    phi[mask] = cand[mask]
    if not mask.any():
        return 0.0
    delta = np.abs(cand - prev) / scale
    return float(delta[mask].max())
