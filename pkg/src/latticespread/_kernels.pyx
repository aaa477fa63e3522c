# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  ``_kernels_py`` holds the numpy equivalents."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()

cdef enum:
    RESEED = 64


def trig_sums(const double complex[::1] coef, const double[::1] k):
    """Return ``(C, S)`` with ``C[j] = sum_r coef[r-1] cos(k[j] r)``, ``S`` with sin.

    The phase is advanced by complex rotation and re-seeded from libm every
    64 terms, so rounding drift stays at the 1e-15 level for any length.
    """
    cdef Py_ssize_t nk = k.shape[0]
    cdef Py_ssize_t nr = coef.shape[0]
    cdef Py_ssize_t j, r
    cdef double kj, c1, s1, cr, sr, tmp, m
    cdef double acc_cr, acc_ci, acc_sr, acc_si
    cdef double complex c
    C = np.empty(nk, dtype=np.complex128)
    S = np.empty(nk, dtype=np.complex128)
    cdef double complex[::1] Cv = C
    cdef double complex[::1] Sv = S
    with nogil:
        for j in range(nk):
            kj = k[j]
            c1 = cos(kj)
            s1 = sin(kj)
            cr = 0.0
            sr = 0.0
            acc_cr = 0.0
            acc_ci = 0.0
            acc_sr = 0.0
            acc_si = 0.0
            for r in range(nr):
                if r % RESEED == 0:
                    m = <double>(r + 1)
                    cr = cos(kj * m)
                    sr = sin(kj * m)
                c = coef[r]
                acc_cr = acc_cr + c.real * cr
                acc_ci = acc_ci + c.imag * cr
                acc_sr = acc_sr + c.real * sr
                acc_si = acc_si + c.imag * sr
                tmp = cr * c1 - sr * s1
                sr = sr * c1 + cr * s1
                cr = tmp
            Cv[j] = acc_cr + 1j * acc_ci
            Sv[j] = acc_sr + 1j * acc_si
    return C, S


def marching_squares(const double[:, ::1] f, bint periodic=False):
    """Zero-level segments of ``f`` on its index grid.

    Returns an ``(M, 2)`` int64 array of the two edge ids joined by each
    segment.  Edge ids: ``2*(i*n1 + j)`` for the edge (i, j)-(i, j+1) and
    ``2*(i*n1 + j) + 1`` for (i, j)-(i+1, j).  Saddle cells are resolved by
    the sign of the corner mean; cells with a NaN corner are skipped.
    """
    cdef Py_ssize_t n0 = f.shape[0], n1 = f.shape[1]
    cdef Py_ssize_t c0 = n0 if periodic else n0 - 1
    cdef Py_ssize_t c1 = n1 if periodic else n1 - 1
    cdef Py_ssize_t i, j, ip, jp, nseg = 0
    cdef double a, b, c, d, center
    cdef int case, ne
    cdef long long e_bot, e_right, e_top, e_left
    cdef long long cross[4]
    seg_buf = np.empty((max(2 * c0 * c1, 1), 2), dtype=np.int64)
    cdef long long[:, ::1] seg = seg_buf
    for i in range(c0):
        ip = (i + 1) % n0
        for j in range(c1):
            jp = (j + 1) % n1
            a = f[i, j]
            b = f[i, jp]
            c = f[ip, jp]
            d = f[ip, j]
            if a != a or b != b or c != c or d != d:
                continue
            case = (a > 0) | ((b > 0) << 1) | ((c > 0) << 2) | ((d > 0) << 3)
            if case == 0 or case == 15:
                continue
            e_bot = 2 * (i * n1 + j)
            e_right = 2 * (i * n1 + jp) + 1
            e_top = 2 * (ip * n1 + j)
            e_left = 2 * (i * n1 + j) + 1
            if case == 5 or case == 10:
                center = 0.25 * (a + b + c + d)
                if (center > 0) == (a > 0):
                    seg[nseg, 0] = e_bot
                    seg[nseg, 1] = e_right
                    seg[nseg + 1, 0] = e_left
                    seg[nseg + 1, 1] = e_top
                else:
                    seg[nseg, 0] = e_bot
                    seg[nseg, 1] = e_left
                    seg[nseg + 1, 0] = e_right
                    seg[nseg + 1, 1] = e_top
                nseg += 2
                continue
            ne = 0
            if (a > 0) != (b > 0):
                cross[ne] = e_bot
                ne += 1
            if (b > 0) != (c > 0):
                cross[ne] = e_right
                ne += 1
            if (d > 0) != (c > 0):
                cross[ne] = e_top
                ne += 1
            if (a > 0) != (d > 0):
                cross[ne] = e_left
                ne += 1
            seg[nseg, 0] = cross[0]
            seg[nseg, 1] = cross[1]
            nseg += 1
    return seg_buf[:nseg].copy()
