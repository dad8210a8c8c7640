# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled core of the L^2 Monte-Carlo feature map.

Mirrors ``_mc_fallback`` exactly; the Python module documents the math.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, sin, cos

cnp.import_array()


def features(const double[:, ::1] z, const double[:, ::1] b, const double[::1] s):
    cdef Py_ssize_t n = z.shape[0], L = b.shape[0], i, l
    out_re = np.empty((n, L))
    out_im = np.empty((n, L))
    cdef double[:, ::1] re = out_re
    cdef double[:, ::1] im = out_im
    cdef double zx, zy, one_m, dx, dy, h, eh, th
    with nogil:
        for i in range(n):
            zx = z[i, 0]
            zy = z[i, 1]
            one_m = 1.0 - zx * zx - zy * zy
            for l in range(L):
                dx = zx - b[l, 0]
                dy = zy - b[l, 1]
                h = 0.5 * log(one_m / (dx * dx + dy * dy))
                eh = exp(h)
                th = 2.0 * s[l] * h
                re[i, l] = eh * cos(th)
                im[i, l] = eh * sin(th)
    return out_re, out_im


def features_vjp(const double[:, ::1] z, const double[:, ::1] b, const double[::1] s,
                 const double[:, ::1] g_re, const double[:, ::1] g_im):
    cdef Py_ssize_t n = z.shape[0], L = b.shape[0], i, l
    out_gz = np.zeros((n, 2))
    out_gs = np.zeros(L)
    cdef double[:, ::1] gz = out_gz
    cdef double[::1] gs = out_gs
    cdef double zx, zy, one_m, dx, dy, dd, h, eh, th, c, sn, gh, acc_x, acc_y, sl
    with nogil:
        for i in range(n):
            zx = z[i, 0]
            zy = z[i, 1]
            one_m = 1.0 - zx * zx - zy * zy
            acc_x = 0.0
            acc_y = 0.0
            for l in range(L):
                sl = s[l]
                dx = zx - b[l, 0]
                dy = zy - b[l, 1]
                dd = dx * dx + dy * dy
                h = 0.5 * log(one_m / dd)
                eh = exp(h)
                th = 2.0 * sl * h
                c = cos(th)
                sn = sin(th)
                gh = g_re[i, l] * eh * (c - 2.0 * sl * sn) + g_im[i, l] * eh * (sn + 2.0 * sl * c)
                acc_x += gh * (-zx / one_m - dx / dd)
                acc_y += gh * (-zy / one_m - dy / dd)
                gs[l] += 2.0 * h * eh * (g_im[i, l] * c - g_re[i, l] * sn)
            gz[i, 0] = acc_x
            gz[i, 1] = acc_y
    return out_gz, out_gs
