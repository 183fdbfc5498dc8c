"""Power diagrams of weighted sites via the lifted lower convex hull.

The diagram of sites p_i with heights h_i assigns to each site the cell
{x : <x, p_i> + h_i >= <x, p_j> + h_j for all j}, clipped to a reference
rectangle. Cell adjacency comes from the lower convex hull of the lifted
points (p_i, -h_i); cells of sites absent from the hull are empty, which is a
first-class state here (area 0, no polygon).

The per-cell clipping loop is the hot path. A compiled kernel is used when
available and the pure-Python twin otherwise; set ``OTMESH_PURE_KERNEL=1`` to
force the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError

if os.environ.get("OTMESH_PURE_KERNEL"):
    from . import _pdclip_py as _kernel

    _COMPILED = False
else:
    try:
        from . import _pdclip as _kernel

        _COMPILED = True
    except ImportError:  # extension not built
        from . import _pdclip_py as _kernel

        _COMPILED = False

__all__ = [
    "Rect",
    "PowerDiagram",
    "GeometryError",
    "kernel_backend",
    "lower_convex_hull",
    "power_diagram",
    "clip_polygon",
    "cell_area_centroid",
    "default_domain",
    "diagram_to_svg",
]


class GeometryError(ValueError):
    """Invalid geometric input (duplicate sites, degenerate configurations)."""


def kernel_backend() -> str:
    """Name of the active clipping kernel: ``compiled`` or ``pure``."""
    return "compiled" if _COMPILED else "pure"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, the reference domain carrying the uniform density."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise GeometryError("rectangle must satisfy xmin < xmax and ymin < ymax")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def corners(self) -> np.ndarray:
        """CCW corner loop starting at (xmin, ymin)."""
        return np.array(
            [
                [self.xmin, self.ymin],
                [self.xmax, self.ymin],
                [self.xmax, self.ymax],
                [self.xmin, self.ymax],
            ]
        )

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (
            (p[:, 0] >= self.xmin - tol)
            & (p[:, 0] <= self.xmax + tol)
            & (p[:, 1] >= self.ymin - tol)
            & (p[:, 1] <= self.ymax + tol)
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.xmin, self.xmax, self.ymin, self.ymax])


def default_domain(points, scale: float = 1.2) -> Rect:
    """Bounding square of the point set, scaled about its center.

    The target sites must end up strictly inside so that every bounded power
    cell stays inside the rectangle's interior margin.
    """

    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise GeometryError("expected (n, 2) points")
    cx = 0.5 * (p[:, 0].min() + p[:, 0].max())
    cy = 0.5 * (p[:, 1].min() + p[:, 1].max())
    half = 0.5 * max(
        p[:, 0].max() - p[:, 0].min(), p[:, 1].max() - p[:, 1].min()
    )
    if half == 0.0:
        half = 1.0
    half *= scale
    return Rect(cx - half, cx + half, cy - half, cy + half)


class PowerDiagram:
    """Clipped power diagram: convex cells, areas, centroids, adjacency.

    ``adj_pairs``/``adj_lengths`` list each adjacent site pair (i < j) once
    with the length of the shared cell edge inside the domain. Empty cells
    carry area 0 and NaN centroid.
    """

    def __init__(self, sites, heights, rect, areas, centroids, poly_coords,
                 poly_indptr, adj_pairs, adj_lengths):
        self.sites = sites
        self.heights = heights
        self.rect = rect
        self.areas = areas
        self.centroids = centroids
        self._poly_coords = poly_coords
        self._poly_indptr = poly_indptr
        self.adj_pairs = adj_pairs
        self.adj_lengths = adj_lengths
        for arr in (sites, heights, areas, centroids, poly_coords, poly_indptr,
                    adj_pairs, adj_lengths):
            arr.setflags(write=False)

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]

    @property
    def empty_mask(self) -> np.ndarray:
        return self.areas == 0.0

    def cell_polygon(self, i: int):
        """CCW vertex loop of cell ``i``, or None when the cell is empty."""
        lo, hi = self._poly_indptr[i], self._poly_indptr[i + 1]
        if hi == lo:
            return None
        return self._poly_coords[lo:hi]

    @property
    def cells(self) -> list:
        return [self.cell_polygon(i) for i in range(self.n_sites)]

    @cached_property
    def adjacency(self) -> dict:
        return {
            (int(i), int(j)): float(l)
            for (i, j), l in zip(self.adj_pairs, self.adj_lengths)
        }

    def __repr__(self):
        ne = int(self.empty_mask.sum())
        return (
            f"PowerDiagram({self.n_sites} sites, {len(self.adj_pairs)} adjacent"
            f" pairs, {ne} empty cells)"
        )


def clip_polygon(poly, normal, offset: float):
    """Intersect a CCW convex polygon with the half-plane normal . x >= offset.

    Vertices on the line are kept; the empty polygon is a valid result.
    """

    p = np.asarray(poly, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise GeometryError("polygon must be (k, 2)")
    nx, ny = (float(c) for c in normal)
    c = float(offset)
    scale = max(1.0, float(np.abs(p).max()) if p.size else 1.0)
    tol = 1e-12 * max(1.0, (abs(nx) + abs(ny)) * scale, abs(c))
    from ._pdclip_py import _clip_halfplane

    out = _clip_halfplane([tuple(q) for q in p], nx, ny, c, tol)
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def cell_area_centroid(poly):
    """Shoelace area and uniform-lamina centroid of a CCW polygon.

    Empty or degenerate polygons return ``(0.0, None)``.
    """

    p = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
    if p.shape[0] < 3:
        return 0.0, None
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, None
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return float(area), np.array([cx, cy])


def lower_convex_hull(points3d):
    """Faces and projected edge adjacency of the lower convex hull.

    Faces are index triples oriented so their normal has negative z component;
    the union of their edges is the candidate power-cell adjacency. Exactly
    coplanar lifts fall back to a Delaunay triangulation of the projection
    (any triangulation of an affine lift is a valid lower hull).
    """

    pts = np.asarray(points3d, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError("expected (n, 3) lifted points")
    n = pts.shape[0]
    if n < 3:
        raise GeometryError("lower hull needs at least 3 points")
    if n == 3:
        e1 = pts[1, :2] - pts[0, :2]
        e2 = pts[2, :2] - pts[0, :2]
        d = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(d) < 1e-14 * max(1.0, np.abs(pts[:, :2]).max() ** 2):
            raise GeometryError("projected points are collinear")
        faces = np.array([[0, 1, 2]], dtype=np.int64)
    else:
        faces = None
        try:
            hull = ConvexHull(pts)
            lower = hull.equations[:, 2] < -1e-12
            if lower.any():
                faces = hull.simplices[lower].astype(np.int64)
        except QhullError:
            faces = None
        if faces is None:
            # flat lift: every triangulation of the projection is a lower hull
            try:
                faces = Delaunay(pts[:, :2]).simplices.astype(np.int64)
            except QhullError as exc:
                raise GeometryError(
                    "fewer than 3 affinely independent projected points"
                ) from exc

    # orient downward: normal z = cross of projected edges, flipped if needed
    e1 = pts[faces[:, 1], :2] - pts[faces[:, 0], :2]
    e2 = pts[faces[:, 2], :2] - pts[faces[:, 0], :2]
    up = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) > 0
    # a lower-hull face with CCW projection has an upward-z cross product in
    # 3D only when the face normal points up; flip those index triples
    oriented = faces.copy()
    oriented[up] = oriented[up][:, ::-1]
    pairs = np.concatenate(
        [np.sort(faces[:, [0, 1]], 1), np.sort(faces[:, [1, 2]], 1),
         np.sort(faces[:, [0, 2]], 1)]
    )
    edges = np.unique(pairs, axis=0)
    return oriented, edges


def _neighbor_csr(edges: np.ndarray, n: int):
    if edges.shape[0] == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    both = np.concatenate([edges, edges[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, both[:, 0] + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, np.ascontiguousarray(both[:, 1])


def power_diagram(sites, heights, rect: Rect) -> PowerDiagram:
    """Power diagram of distinct sites clipped to ``rect``.

    Each cell is the intersection of the rectangle with the bisector
    half-planes of the site's hull neighbors; the full invariant set
    (partition of the rectangle, convexity, dominance, symmetric adjacency)
    follows from hull duality. Adding a constant to all heights leaves the
    diagram unchanged.
    """

    s = np.ascontiguousarray(np.asarray(sites, dtype=np.float64))
    h = np.ascontiguousarray(np.asarray(heights, dtype=np.float64))
    if s.ndim != 2 or s.shape[1] != 2:
        raise GeometryError("sites must be (n, 2)")
    if h.shape != (s.shape[0],):
        raise GeometryError("heights must align with sites")
    n = s.shape[0]
    if n == 0:
        raise GeometryError("no sites")
    if np.unique(s, axis=0).shape[0] != n:
        raise GeometryError("duplicate sites")

    if n == 1:
        poly = rect.corners()
        area, cent = cell_area_centroid(poly)
        return PowerDiagram(
            s, h, rect,
            np.array([area]), cent.reshape(1, 2), poly,
            np.array([0, 4], dtype=np.int64),
            np.zeros((0, 2), dtype=np.int64), np.zeros(0),
        )

    if n == 2:
        edges = np.array([[0, 1]], dtype=np.int64)
        on_hull = np.ones(n, dtype=np.uint8)
    else:
        lifted = np.column_stack([s, -h])
        _, edges = lower_convex_hull(lifted)
        on_hull = np.zeros(n, dtype=np.uint8)
        on_hull[np.unique(edges)] = 1

    indptr, indices = _neighbor_csr(edges, n)
    areas, cents, coords, pind, contact = _kernel.clip_cells(
        s, h, rect.as_array(),
        indptr.astype(np.longlong), indices.astype(np.longlong), on_hull,
    )

    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    scale = max(abs(rect.xmin), abs(rect.xmax), abs(rect.ymin), abs(rect.ymax), 1.0)
    keep = (indices > rows) & (contact > 1e-12 * scale)
    adj_pairs = np.column_stack([rows[keep], indices[keep]])
    adj_lengths = np.ascontiguousarray(contact[keep])
    return PowerDiagram(s, h, rect, areas, cents, coords, pind, adj_pairs, adj_lengths)


# ---------------------------------------------------------------------------
# debug export


def diagram_to_svg(pd: PowerDiagram, width: int = 720) -> str:
    """Deterministic SVG of the diagram: cells as polygons, sites as dots."""

    r = pd.rect
    w = r.xmax - r.xmin
    h = r.ymax - r.ymin
    stroke = 0.002 * max(w, h)
    dot = 0.006 * max(w, h)

    def fmt(x):
        return f"{x:.6f}"

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{int(round(width * h / w))}" '
        f'viewBox="{fmt(r.xmin)} {fmt(-r.ymax)} {fmt(w)} {fmt(h)}">',
        f'<g transform="scale(1,-1)" stroke="black" stroke-width="{fmt(stroke)}" '
        'fill="none">',
        f'<rect x="{fmt(r.xmin)}" y="{fmt(r.ymin)}" width="{fmt(w)}" '
        f'height="{fmt(h)}"/>',
    ]
    for i in range(pd.n_sites):
        poly = pd.cell_polygon(i)
        if poly is None:
            continue
        pts = " ".join(f"{fmt(x)},{fmt(y)}" for x, y in poly)
        lines.append(f'<polygon points="{pts}"/>')
    for x, y in pd.sites:
        lines.append(
            f'<circle cx="{fmt(x)}" cy="{fmt(y)}" r="{fmt(dot)}" fill="black" '
            'stroke="none"/>'
        )
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
