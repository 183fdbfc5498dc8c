"""Beltrami coefficients of piecewise-linear maps and patch-wise correction.

For an orientation-preserving map the per-face Beltrami coefficient
mu = f_zbar / f_z has magnitude below one; |mu| >= 1 or a vanishing f_z marks
a flipped or degenerate face. The correction pass removes such regions by
remapping small vertex patches harmonically under an auxiliary metric
|dz + mu dzbar| that absorbs the prescribed distortion, leaving mesh
connectivity untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .harmonic import LaplaceProblem, SolveError, solve_laplace
from .mesh import (
    EdgeWeightMap,
    MeshError,
    TriMesh,
    cot_weights_for_faces,
    cotangent_weights,
    flipped_faces,
)

logger = logging.getLogger(__name__)

__all__ = [
    "BeltramiField",
    "Patch",
    "CorrectionReport",
    "face_beltrami",
    "vertex_beltrami",
    "beltrami_field",
    "auxiliary_metric",
    "gamma_ring",
    "qc_correct",
    "mu_csv",
]

# |f_z| below this factor times the face scale marks a degenerate-conformal
# (flip sentinel) face; the stored stand-in keeps averaging finite.
_FZ_TOL = 1e-14
_SENTINEL_MAG = 1e16
# boundary Beltrami values are clamped to this magnitude before diffusion so
# the auxiliary metric stays a metric
_MU_CLAMP = 0.99


@dataclass
class BeltramiField:
    """Per-face and per-vertex complex distortion coefficients of a PL map.

    ``face_zero`` marks faces with vanishing f_z; their magnitude is reported
    as infinity and propagates to incident vertices. ``face_flip`` marks every
    orientation-violating face (|mu| >= 1 or vanishing f_z).
    """

    per_face: np.ndarray
    per_vertex: np.ndarray
    face_zero: np.ndarray
    face_flip: np.ndarray
    vertex_zero: np.ndarray

    def face_magnitude(self) -> np.ndarray:
        mag = np.abs(self.per_face)
        mag[self.face_zero] = np.inf
        return mag

    def vertex_magnitude(self) -> np.ndarray:
        mag = np.abs(self.per_vertex)
        mag[self.vertex_zero] = np.inf
        return mag

    def sup_norm(self) -> float:
        """Max per-vertex magnitude (infinite when a flip sentinel touches)."""
        return float(self.vertex_magnitude().max())

    @property
    def has_flips(self) -> bool:
        """True when any face violates orientation (area averaging at the
        vertices can dilute an isolated flip below any threshold)."""
        return bool(self.face_flip.any())


def _wirtinger(src_pts: np.ndarray, dst_pts: np.ndarray):
    """f_z, f_zbar of the affine maps src -> dst, triangles stacked on axis 0."""
    sz = src_pts[..., 0] + 1j * src_pts[..., 1]
    dz = dst_pts[..., 0] + 1j * dst_pts[..., 1]
    e1 = sz[..., 1] - sz[..., 0]
    e2 = sz[..., 2] - sz[..., 0]
    w1 = dz[..., 1] - dz[..., 0]
    w2 = dz[..., 2] - dz[..., 0]
    det = e1 * np.conj(e2) - np.conj(e1) * e2
    fz = (w1 * np.conj(e2) - w2 * np.conj(e1)) / det
    fzb = (e1 * w2 - e2 * w1) / det
    return fz, fzb


def _face_mu(src_pts, dst_pts):
    """Per-face mu with a finite stand-in on sentinel faces, plus masks."""
    src_pts = np.asarray(src_pts, dtype=np.float64)
    dst_pts = np.asarray(dst_pts, dtype=np.float64)
    scale = np.linalg.norm(
        src_pts - np.roll(src_pts, 1, axis=-2), axis=-1
    ).max(axis=-1)
    e1 = src_pts[..., 1, :] - src_pts[..., 0, :]
    e2 = src_pts[..., 2, :] - src_pts[..., 0, :]
    area2 = np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])
    if np.any(scale == 0.0) or np.any(area2 <= 1e-14 * scale**2):
        raise MeshError("degenerate source triangle")
    fz, fzb = _wirtinger(src_pts, dst_pts)
    zero = np.abs(fz) <= _FZ_TOL * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(zero, 0.0, fzb) / np.where(zero, 1.0, fz)
    if np.any(zero):
        mag = np.abs(fzb)
        direction = np.where(mag > 0.0, fzb / np.where(mag > 0, mag, 1.0), 1.0)
        mu = np.where(zero, direction * _SENTINEL_MAG, mu)
    flip = zero | (np.abs(mu) >= 1.0)
    return mu, zero, flip


def face_beltrami(src, dst) -> complex:
    """Beltrami coefficient of the affine map between two 2D triangles.

    Returns f_zbar / f_z from the Wirtinger derivatives of the affine map; a
    vanishing f_z (anti-conformal flip) yields an infinite-magnitude value.
    """

    mu, zero, _ = _face_mu(np.asarray(src)[None], np.asarray(dst)[None])
    if zero[0]:
        return complex(np.inf, 0.0)
    return complex(mu[0])


def vertex_beltrami(mesh: TriMesh, per_face: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident face coefficients, per vertex."""
    per_face = np.asarray(per_face, dtype=np.complex128)
    if per_face.shape != (mesh.n_faces,):
        raise MeshError("per_face must hold one value per face")
    areas = mesh.face_areas()
    num = np.zeros(mesh.n_vertices, dtype=np.complex128)
    den = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(num, mesh.faces[:, k], areas * per_face)
        np.add.at(den, mesh.faces[:, k], areas)
    den[den == 0.0] = 1.0
    return num / den


def beltrami_field(src_mesh: TriMesh, dst_mesh: TriMesh) -> BeltramiField:
    """Beltrami field of the PL map src -> dst on shared connectivity."""
    if not (src_mesh.is_2d and dst_mesh.is_2d):
        raise MeshError("Beltrami fields are computed between 2D meshes")
    if not np.array_equal(src_mesh.faces, dst_mesh.faces):
        raise MeshError("meshes must share one face list")
    f = src_mesh.faces
    mu, zero, flip = _face_mu(src_mesh.vertices[f], dst_mesh.vertices[f])
    per_vertex = vertex_beltrami(src_mesh, mu)
    vzero = np.zeros(src_mesh.n_vertices, dtype=bool)
    vzero[f[zero].ravel()] = True
    return BeltramiField(mu, per_vertex, zero, flip, vzero)


def auxiliary_metric(dz: complex, mu_edge: complex) -> float:
    """Length |dz + mu . conj(dz)| of an edge under the auxiliary metric."""
    dz = complex(dz)
    return float(abs(dz + complex(mu_edge) * dz.conjugate()))


def mu_csv(field: BeltramiField) -> str:
    """Per-vertex magnitude and argument as CSV text (debug export)."""
    lines = ["vertex,abs_mu,arg_mu"]
    mag = field.vertex_magnitude()
    arg = np.angle(field.per_vertex)
    for i in range(len(mag)):
        lines.append(f"{i},{mag[i]:.12g},{arg[i]:.12g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# patches


@dataclass
class Patch:
    """Vertex neighborhood of graph radius gamma around a center vertex.

    ``boundary`` is the ordered submesh boundary loop when it is a single
    closed curve, otherwise None. ``interior`` excludes the loop and any mesh
    boundary vertices (those stay fixed). ``image_polygon`` is filled by the
    correction pass.
    """

    center: int
    gamma: int
    vertices: np.ndarray
    distances: np.ndarray
    boundary: np.ndarray | None
    interior: np.ndarray
    faces: np.ndarray
    touches_mesh_boundary: bool
    image_polygon: np.ndarray | None = field(default=None)


def _subset_boundary_loop(faces: np.ndarray, n: int):
    """Ordered boundary loop of a face subset, or None when not one loop."""
    if faces.shape[0] == 0:
        return None
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    codes = directed[:, 0] * n + directed[:, 1]
    reverse = directed[:, 1] * n + directed[:, 0]
    bd = directed[~np.isin(reverse, codes)]
    if bd.shape[0] == 0:
        return None
    succ = {}
    for i, j in bd:
        if int(i) in succ:
            return None
        succ[int(i)] = int(j)
    start = int(bd[:, 0].min())
    loop = [start]
    cur = succ[start]
    while cur != start:
        if len(loop) > bd.shape[0]:
            return None
        loop.append(cur)
        cur = succ.get(cur, -1)
        if cur == -1:
            return None
    if len(loop) != bd.shape[0]:
        return None
    return np.array(loop, dtype=np.int64)


def gamma_ring(mesh: TriMesh, center: int, gamma: int) -> Patch:
    """Patch of all vertices within graph distance gamma of ``center``.

    The patch submesh consists of the faces whose vertices all lie in the
    patch; its boundary loop is the ring at distance gamma for interior
    patches. Patches touching the mesh boundary keep those vertices fixed.
    """

    if gamma < 1:
        raise MeshError("gamma must be a positive integer")
    n = mesh.n_vertices
    dist = np.full(n, -1, dtype=np.int64)
    dist[center] = 0
    frontier = [center]
    for d in range(1, gamma + 1):
        nxt = []
        for v in frontier:
            for u in mesh.vertex_neighbors(v):
                if dist[u] == -1:
                    dist[u] = d
                    nxt.append(int(u))
        frontier = nxt
    in_patch = dist >= 0
    verts = np.nonzero(in_patch)[0]
    fmask = in_patch[mesh.faces].all(axis=1)
    faces = np.nonzero(fmask)[0]
    loop = _subset_boundary_loop(mesh.faces[fmask], n)
    touches = bool(mesh.boundary_flags[verts].any())
    fixed = np.zeros(n, dtype=bool)
    if loop is not None:
        fixed[loop] = True
    else:
        fixed[verts[dist[verts] == gamma]] = True
    fixed |= mesh.boundary_flags
    interior = verts[~fixed[verts]]
    return Patch(
        center=int(center),
        gamma=int(gamma),
        vertices=verts,
        distances=dist,
        boundary=loop,
        interior=interior,
        faces=faces,
        touches_mesh_boundary=touches,
    )


def _is_ccw_convex(polygon: np.ndarray) -> bool:
    """All consecutive-edge cross products non-negative within tolerance."""
    p = polygon
    if p.shape[0] < 3:
        return False
    e = np.roll(p, -1, axis=0) - p
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    scale = (np.linalg.norm(e, axis=1).max()) ** 2
    return bool((cross >= -1e-10 * scale).all())


# ---------------------------------------------------------------------------
# correction


@dataclass
class CorrectionReport:
    """What the correction pass did: one entry per processed bad vertex."""

    n_bad: int = 0
    corrected: list = field(default_factory=list)  # (vertex, gamma used)
    skipped: list = field(default_factory=list)  # (vertex, reason)
    warnings: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.skipped


def _clamp_mu(values: np.ndarray, limit: float = _MU_CLAMP) -> np.ndarray:
    mag = np.abs(values)
    factor = np.where(mag > limit, limit / np.where(mag > 0, mag, 1.0), 1.0)
    return values * factor


class _LocalPatch:
    """Patch submesh in local indices, for the small Dirichlet solves."""

    def __init__(self, m0: TriMesh, patch: Patch, fixed: np.ndarray):
        self.n = patch.vertices.size
        lmap = np.full(m0.n_vertices, -1, dtype=np.int64)
        lmap[patch.vertices] = np.arange(self.n)
        self.lmap = lmap
        self.verts = patch.vertices
        self.faces = lmap[m0.faces[patch.faces]]
        self.fixed = lmap[fixed]
        self.interior = lmap[patch.interior]

    def weights(self, lengths: np.ndarray) -> EdgeWeightMap:
        edges, weights = cot_weights_for_faces(self.faces, self.n, lengths)
        return EdgeWeightMap(edges, weights)

    def solve(self, wmap: EdgeWeightMap, fixed_values: np.ndarray) -> np.ndarray:
        return solve_laplace(
            LaplaceProblem(self.n, wmap, self.fixed, fixed_values)
        )


def _correct_patch(m0, w0, zsrc, positions, center, mu_vertex, gamma, gamma_max, report):
    """Correct one patch in place on ``positions``; returns True on success."""

    patch = None
    convex = False
    for g in range(gamma, gamma_max + 1):
        cand = gamma_ring(m0, center, g)
        patch = cand
        if cand.interior.size == 0:
            continue
        if cand.boundary is not None and _is_ccw_convex(positions[cand.boundary]):
            convex = True
            break
    if patch is None or patch.interior.size == 0:
        report.skipped.append((center, "no interior vertices"))
        return False
    if not convex:
        msg = (
            f"patch at vertex {center}: image boundary not convex at "
            f"gamma={patch.gamma}; proceeding with harmonic map"
        )
        report.warnings.append(msg)
        logger.warning(msg)
    if patch.boundary is not None:
        patch.image_polygon = positions[patch.boundary].copy()

    fixed = np.setdiff1d(patch.vertices, patch.interior)
    local = _LocalPatch(m0, patch, fixed)

    # fill the patch Beltrami values by harmonic diffusion of the clamped
    # boundary values, using the source mesh weights on the patch edges
    mask = np.isin(w0.edges, patch.vertices).all(axis=1)
    wp = EdgeWeightMap(local.lmap[w0.edges[mask]], w0.weights[mask])
    try:
        mu_hat = local.solve(wp, _clamp_mu(mu_vertex[fixed]))
    except SolveError as exc:
        report.skipped.append((center, f"diffusion failed: {exc}"))
        return False
    mu_hat = _clamp_mu(mu_hat)

    # auxiliary lengths for the patch faces from the source coordinates; when
    # they violate the triangle inequality, shrink the filled field toward the
    # plain source metric (scale 0) until the lengths form valid triangles
    z = zsrc[patch.vertices]
    dz = np.empty((local.faces.shape[0], 3), dtype=np.complex128)
    mu_edge = np.empty_like(dz)
    for k in range(3):
        i, j = local.faces[:, (k + 1) % 3], local.faces[:, (k + 2) % 3]
        dz[:, k] = z[i] - z[j]
        mu_edge[:, k] = 0.5 * (mu_hat[i] + mu_hat[j])
    w_aux = None
    for scale in (1.0, 0.5, 0.25, 0.125, 1 / 16, 1 / 32, 0.0):
        try:
            w_aux = local.weights(np.abs(dz + scale * mu_edge * np.conj(dz)))
        except MeshError:
            continue
        if scale < 1.0:
            msg = (
                f"patch at vertex {center}: auxiliary metric violates the "
                f"triangle inequality; field scaled by {scale:g}"
            )
            report.warnings.append(msg)
            logger.warning(msg)
        break
    if w_aux is None:  # scale 0 is the source metric, valid by construction
        report.skipped.append((center, "auxiliary metric degenerate"))
        return False

    try:
        new_pos = local.solve(w_aux, positions[fixed])
    except SolveError as exc:
        report.skipped.append((center, f"harmonic map failed: {exc}"))
        return False

    trial = positions.copy()
    trial[patch.interior] = new_pos[local.interior]
    if _patch_has_flips(m0.faces[patch.faces], trial):
        # negative auxiliary weights can break the embedding; uniform weights
        # onto a convex image polygon restore it
        w_uni = EdgeWeightMap(wp.edges, np.ones(len(wp)))
        try:
            new_pos = local.solve(w_uni, positions[fixed])
        except SolveError as exc:
            report.skipped.append((center, f"harmonic map failed: {exc}"))
            return False
        trial = positions.copy()
        trial[patch.interior] = new_pos[local.interior]
        if _patch_has_flips(m0.faces[patch.faces], trial):
            msg = f"patch at vertex {center}: flips remain after correction"
            report.warnings.append(msg)
            logger.warning(msg)
        else:
            report.warnings.append(
                f"patch at vertex {center}: fell back to uniform weights"
            )
    positions[:] = trial
    report.corrected.append((center, patch.gamma))
    return True


def qc_correct(
    m0: TriMesh,
    mhat: TriMesh,
    mu: BeltramiField,
    eps: float,
    gamma: int = 2,
    gamma_max: int = 5,
    cleanup_passes: int = 3,
) -> tuple[TriMesh, CorrectionReport]:
    """Remove flips and over-distortion from ``mhat`` patch by patch.

    Vertices with |mu| > eps are processed in descending magnitude order,
    later patches seeing earlier corrections. Each patch is grown from
    ``gamma`` until its image boundary polygon is convex (or ``gamma_max`` is
    reached, then the map proceeds with a warning); the interior Beltrami
    values are filled by harmonic diffusion with the source mesh weights,
    converted to an auxiliary metric, and the patch is harmonically remapped
    onto its image boundary. After the main pass, any faces still flipped are
    targeted by up to ``cleanup_passes`` sweeps with recomputed fields and
    growing rings. Connectivity is never modified; patch boundary positions
    are preserved bit-exactly.
    """

    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    if m0.n_vertices != mhat.n_vertices or not np.array_equal(m0.faces, mhat.faces):
        raise MeshError("source and target must share connectivity")
    mags = mu.vertex_magnitude()
    order = np.lexsort((np.arange(len(mags)), -mags))
    bad = order[mags[order] > eps]
    report = CorrectionReport(n_bad=int(bad.size))
    if bad.size == 0 and flipped_faces(mhat).size == 0:
        return mhat, report

    w0 = cotangent_weights(m0)
    positions = mhat.vertices.copy()
    zsrc = m0.vertices[:, 0] + 1j * m0.vertices[:, 1]

    for center in bad:
        _correct_patch(
            m0, w0, zsrc, positions, int(center), mu.per_vertex,
            gamma, gamma_max, report,
        )

    # flip cleanup: the topology guarantee is the postcondition, so faces
    # still flipped after the distortion pass are re-targeted with the field
    # of the current positions and progressively larger rings
    for sweep in range(cleanup_passes):
        current = mhat.with_vertices(positions.copy())
        still = flipped_faces(current)
        if still.size == 0:
            break
        field = beltrami_field(m0, current)
        fmags = field.vertex_magnitude()
        centers = np.unique(m0.faces[still].ravel())
        centers = centers[np.lexsort((centers, -fmags[centers]))]
        g = gamma + sweep + 1
        for center in centers:
            _correct_patch(
                m0, w0, zsrc, positions, int(center), field.per_vertex,
                g, max(gamma_max, g), report,
            )

    return mhat.with_vertices(positions), report


def _patch_has_flips(faces: np.ndarray, positions: np.ndarray) -> bool:
    a = positions[faces[:, 0]]
    b = positions[faces[:, 1]]
    c = positions[faces[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (
        c[:, 0] - a[:, 0]
    )
    return bool((cross <= 0.0).any())
