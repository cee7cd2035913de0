# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled red-black projected SOR half sweep.

Arithmetically identical to the numpy fallback: neighbors are read from
``prev`` with edge-clamped indices, the stencil sum accumulates in the same
term order, and the gradient clamp is applied before the obstacle clamp.
"""


def sweep_color(double[:, ::1] phi, double[:, ::1] prev, double[:, :, ::1] coef,
                double[:, ::1] rhs, double[::1] lower, double[:, ::1] scale,
                double omega, int color, int use_obstacle, int use_gradient):
    """Update the ``color`` nodes of interior rows of ``phi`` in place.

    Returns the largest scaled update among touched nodes.
    """
    cdef Py_ssize_t nz = phi.shape[0]
    cdef Py_ssize_t ny = phi.shape[1]
    cdef Py_ssize_t i, j, j0, im, ip, jm, jp
    cdef double s, gs, cand, d
    cdef double dmax = 0.0
    for i in range(1, nz - 1):
        im = i - 1
        ip = i + 1
        j0 = (i + color) % 2
        for j in range(j0, ny, 2):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            s = rhs[i, j]
            s += coef[1, i, j] * prev[ip, j]
            s += coef[2, i, j] * prev[im, j]
            s += coef[3, i, j] * prev[i, jp]
            s += coef[4, i, j] * prev[i, jm]
            s += coef[5, i, j] * prev[ip, jp]
            s += coef[6, i, j] * prev[im, jm]
            s += coef[7, i, j] * prev[ip, jm]
            s += coef[8, i, j] * prev[im, jp]
            gs = -s / coef[0, i, j]
            cand = prev[i, j] + omega * (gs - prev[i, j])
            if use_gradient and cand > prev[im, j]:
                cand = prev[im, j]
            if use_obstacle and cand < lower[i]:
                cand = lower[i]
            phi[i, j] = cand
            d = cand - prev[i, j]
            if d < 0.0:
                d = -d
            d = d / scale[i, j]
            if d > dmax:
                dmax = d
    return dmax
