"""Pure-Python cell clipping kernel.

Reference implementation of the hot loop behind power diagram construction:
clip the domain rectangle against the bisector half-planes of each site's hull
neighbors, then measure area, centroid, and per-neighbor shared edge length.
The compiled module ``otmesh._pdclip`` mirrors this exactly; both must return
identical results (see tests and benchmarks).
"""

from __future__ import annotations

import math

import numpy as np


def _clip_halfplane(poly, nx, ny, c, tol):
    """Keep the part of a convex CCW polygon with nx*x + ny*y >= c - tol."""
    out = []
    m = len(poly)
    sx, sy = poly[-1]
    ds = nx * sx + ny * sy - c
    for k in range(m):
        ex, ey = poly[k]
        de = nx * ex + ny * ey - c
        if de >= -tol:
            if ds < -tol:
                t = ds / (ds - de)
                out.append((sx + t * (ex - sx), sy + t * (ey - sy)))
            out.append((ex, ey))
        elif ds >= -tol:
            t = ds / (ds - de)
            out.append((sx + t * (ex - sx), sy + t * (ey - sy)))
        sx, sy, ds = ex, ey, de
    return out


def _dedup(poly, tol):
    out = []
    m = len(poly)
    for k in range(m):
        px, py = poly[k]
        qx, qy = poly[(k + 1) % m]
        if abs(px - qx) > tol or abs(py - qy) > tol:
            out.append((px, py))
    return out


def clip_cells(sites, heights, rect, indptr, indices, on_hull):
    """Clip every site's power cell to the rectangle.

    Parameters are contiguous float64/int64 arrays: ``rect`` is
    (xmin, xmax, ymin, ymax); ``indptr``/``indices`` the CSR candidate
    neighbor lists; ``on_hull`` marks sites on the lifted lower hull.

    Returns ``(areas, centroids, poly_coords, poly_indptr, contact)`` where
    ``contact[t]`` is the shared edge length between cell i and its t-th CSR
    neighbor, and centroids are NaN for empty cells.
    """

    n = sites.shape[0]
    xmin, xmax, ymin, ymax = (float(r) for r in rect)
    scale = max(abs(xmin), abs(xmax), abs(ymin), abs(ymax), 1.0)
    area_floor = 1e-14 * scale * scale
    dedup_tol = 1e-13 * scale

    areas = np.zeros(n)
    centroids = np.full((n, 2), np.nan)
    contact = np.zeros(indices.shape[0])
    poly_indptr = np.zeros(n + 1, dtype=np.int64)
    chunks = []

    s = sites.tolist()
    h = heights.tolist()
    idx = indices.tolist()
    total = 0
    for i in range(n):
        poly_indptr[i] = total
        if not on_hull[i]:
            continue
        lo, hi = int(indptr[i]), int(indptr[i + 1])
        poly = [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]
        planes = []
        for t in range(lo, hi):
            j = idx[t]
            nx = s[i][0] - s[j][0]
            ny = s[i][1] - s[j][1]
            c = h[j] - h[i]
            tol = 1e-12 * max(1.0, (abs(nx) + abs(ny)) * scale, abs(c))
            planes.append((nx, ny, c, tol))
            if poly:
                poly = _clip_halfplane(poly, nx, ny, c, tol)
        if len(poly) >= 3:
            poly = _dedup(poly, dedup_tol)
        if len(poly) < 3:
            continue

        area = 0.0
        cx = 0.0
        cy = 0.0
        m = len(poly)
        for k in range(m):
            ax, ay = poly[k]
            bx, by = poly[(k + 1) % m]
            cr = ax * by - bx * ay
            area += cr
            cx += (ax + bx) * cr
            cy += (ay + by) * cr
        area *= 0.5
        if area <= area_floor:
            continue
        areas[i] = area
        centroids[i, 0] = cx / (6.0 * area)
        centroids[i, 1] = cy / (6.0 * area)

        for t, (nx, ny, c, tol) in zip(range(lo, hi), planes):
            on_tol = 2.0 * tol
            length = 0.0
            for k in range(m):
                ax, ay = poly[k]
                bx, by = poly[(k + 1) % m]
                if (
                    abs(nx * ax + ny * ay - c) <= on_tol
                    and abs(nx * bx + ny * by - c) <= on_tol
                ):
                    # sqrt of products keeps results bit-identical to the C kernel
                    dx = bx - ax
                    dy = by - ay
                    length += math.sqrt(dx * dx + dy * dy)
            contact[t] = length

        chunks.append(np.array(poly, dtype=np.float64))
        total += m
    poly_indptr[n] = total
    coords = np.concatenate(chunks) if chunks else np.zeros((0, 2))
    return areas, centroids, coords, poly_indptr, contact
