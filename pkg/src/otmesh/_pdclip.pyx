# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled cell clipping kernel.

Mirror of ``otmesh._pdclip_py`` with identical semantics; see that module for
the documented reference implementation.
"""

from libc.math cimport fabs, sqrt
from libc.stdlib cimport free, malloc

import numpy as np


cdef inline double _max2(double a, double b) nogil:
    return a if a > b else b


cdef inline Py_ssize_t _clip_halfplane(
    double* src, Py_ssize_t m, double* dst,
    double nx, double ny, double c, double tol,
) nogil:
    cdef Py_ssize_t k, out = 0
    cdef double sx, sy, ex, ey, ds, de, t
    sx = src[2 * (m - 1)]
    sy = src[2 * m - 1]
    ds = nx * sx + ny * sy - c
    for k in range(m):
        ex = src[2 * k]
        ey = src[2 * k + 1]
        de = nx * ex + ny * ey - c
        if de >= -tol:
            if ds < -tol:
                t = ds / (ds - de)
                dst[2 * out] = sx + t * (ex - sx)
                dst[2 * out + 1] = sy + t * (ey - sy)
                out += 1
            dst[2 * out] = ex
            dst[2 * out + 1] = ey
            out += 1
        elif ds >= -tol:
            t = ds / (ds - de)
            dst[2 * out] = sx + t * (ex - sx)
            dst[2 * out + 1] = sy + t * (ey - sy)
            out += 1
        sx = ex
        sy = ey
        ds = de
    return out


cdef inline Py_ssize_t _dedup(double* src, Py_ssize_t m, double* dst, double tol) nogil:
    cdef Py_ssize_t k, nxt, out = 0
    cdef double px, py, qx, qy
    for k in range(m):
        px = src[2 * k]
        py = src[2 * k + 1]
        nxt = k + 1 if k + 1 < m else 0
        qx = src[2 * nxt]
        qy = src[2 * nxt + 1]
        if fabs(px - qx) > tol or fabs(py - qy) > tol:
            dst[2 * out] = px
            dst[2 * out + 1] = py
            out += 1
    return out


def clip_cells(
    const double[:, ::1] sites,
    const double[::1] heights,
    const double[::1] rect,
    const long long[::1] indptr,
    const long long[::1] indices,
    const unsigned char[::1] on_hull,
):
    cdef Py_ssize_t n = sites.shape[0]
    cdef Py_ssize_t nidx = indices.shape[0]
    cdef double xmin = rect[0], xmax = rect[1], ymin = rect[2], ymax = rect[3]
    cdef double scale = _max2(_max2(fabs(xmin), fabs(xmax)), _max2(fabs(ymin), fabs(ymax)))
    if scale < 1.0:
        scale = 1.0
    cdef double area_floor = 1e-14 * scale * scale
    cdef double dedup_tol = 1e-13 * scale

    areas_arr = np.zeros(n)
    cents_arr = np.full((n, 2), np.nan)
    contact_arr = np.zeros(nidx)
    pind_arr = np.zeros(n + 1, dtype=np.int64)
    cdef double[::1] areas = areas_arr
    cdef double[:, ::1] cents = cents_arr
    cdef double[::1] contact = contact_arr
    cdef long long[::1] pind = pind_arr

    cdef Py_ssize_t maxdeg = 0, i, t, k, lo, hi, deg, m, nxt, total
    for i in range(n):
        if indptr[i + 1] - indptr[i] > maxdeg:
            maxdeg = indptr[i + 1] - indptr[i]
    cdef Py_ssize_t bufcap = 2 * maxdeg + 16

    coords_arr = np.zeros((4 * n + 2 * nidx + 16, 2))
    cdef double[:, ::1] coords = coords_arr

    cdef double* buf_a = <double*> malloc(2 * bufcap * sizeof(double))
    cdef double* buf_b = <double*> malloc(2 * bufcap * sizeof(double))
    cdef double* nxs = <double*> malloc(maxdeg * sizeof(double)) if maxdeg else NULL
    cdef double* nys = <double*> malloc(maxdeg * sizeof(double)) if maxdeg else NULL
    cdef double* cs = <double*> malloc(maxdeg * sizeof(double)) if maxdeg else NULL
    cdef double* tols = <double*> malloc(maxdeg * sizeof(double)) if maxdeg else NULL
    if buf_a == NULL or buf_b == NULL or (maxdeg and (nxs == NULL or nys == NULL or cs == NULL or tols == NULL)):
        free(buf_a); free(buf_b); free(nxs); free(nys); free(cs); free(tols)
        raise MemoryError()

    cdef double* cur
    cdef double* alt
    cdef double* tmp
    cdef double nx, ny, c, tol, area, cx, cy, ax, ay, bx, by, cr, on_tol, length
    cdef long long j

    total = 0
    try:
        for i in range(n):
            pind[i] = total
            if not on_hull[i]:
                continue
            lo = indptr[i]
            hi = indptr[i + 1]
            deg = hi - lo

            cur = buf_a
            alt = buf_b
            cur[0] = xmin; cur[1] = ymin
            cur[2] = xmax; cur[3] = ymin
            cur[4] = xmax; cur[5] = ymax
            cur[6] = xmin; cur[7] = ymax
            m = 4

            for t in range(deg):
                j = indices[lo + t]
                nx = sites[i, 0] - sites[j, 0]
                ny = sites[i, 1] - sites[j, 1]
                c = heights[j] - heights[i]
                tol = 1e-12 * _max2(1.0, _max2((fabs(nx) + fabs(ny)) * scale, fabs(c)))
                nxs[t] = nx; nys[t] = ny; cs[t] = c; tols[t] = tol
                if m > 0:
                    m = _clip_halfplane(cur, m, alt, nx, ny, c, tol)
                    tmp = cur; cur = alt; alt = tmp
            if m >= 3:
                m = _dedup(cur, m, alt, dedup_tol)
                tmp = cur; cur = alt; alt = tmp
            if m < 3:
                continue

            area = 0.0
            cx = 0.0
            cy = 0.0
            for k in range(m):
                nxt = k + 1 if k + 1 < m else 0
                ax = cur[2 * k]; ay = cur[2 * k + 1]
                bx = cur[2 * nxt]; by = cur[2 * nxt + 1]
                cr = ax * by - bx * ay
                area += cr
                cx += (ax + bx) * cr
                cy += (ay + by) * cr
            area *= 0.5
            if area <= area_floor:
                continue
            areas[i] = area
            cents[i, 0] = cx / (6.0 * area)
            cents[i, 1] = cy / (6.0 * area)

            for t in range(deg):
                nx = nxs[t]; ny = nys[t]; c = cs[t]
                on_tol = 2.0 * tols[t]
                length = 0.0
                for k in range(m):
                    nxt = k + 1 if k + 1 < m else 0
                    ax = cur[2 * k]; ay = cur[2 * k + 1]
                    bx = cur[2 * nxt]; by = cur[2 * nxt + 1]
                    if (fabs(nx * ax + ny * ay - c) <= on_tol
                            and fabs(nx * bx + ny * by - c) <= on_tol):
                        length += sqrt((bx - ax) * (bx - ax) + (by - ay) * (by - ay))
                contact[lo + t] = length

            for k in range(m):
                coords[total + k, 0] = cur[2 * k]
                coords[total + k, 1] = cur[2 * k + 1]
            total += m
        pind[n] = total
    finally:
        free(buf_a); free(buf_b); free(nxs); free(nys); free(cs); free(tols)

    return areas_arr, cents_arr, coords_arr[:total].copy(), pind_arr, contact_arr
