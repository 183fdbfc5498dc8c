"""Triangle mesh data structure, OBJ/OFF I/O, and local mesh quantities.

Meshes are manifold, consistently oriented triangulations. 2D meshes keep
counter-clockwise faces on flip-free embeddings; orientation violations are
reported by :func:`flipped_faces` rather than rejected at construction, so a
deformed copy of a mesh can always be represented. Disk topology (exactly one
boundary loop, connected) is enforced by :func:`load_mesh` and by
:func:`boundary_loop`, not by the constructor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "TriMesh",
    "EdgeWeightMap",
    "MeshError",
    "NonManifoldError",
    "OrientationError",
    "TopologyError",
    "load_mesh",
    "save_mesh",
    "vertex_area",
    "vertex_areas",
    "cotangent_weights",
    "uniform_weights",
    "boundary_loop",
    "flipped_faces",
    "image_to_mesh",
    "sample_image",
]

# Rec.601 luminance coefficients, also used for color OBJ input.
_LUMA = (0.299, 0.587, 0.114)

# A face is degenerate when its area is below this factor times the squared
# longest edge.
DEGENERACY_FACTOR = 1e-14


class MeshError(ValueError):
    """Invalid mesh data or mesh file."""


class NonManifoldError(MeshError):
    """An edge is shared by more than two faces."""


class OrientationError(MeshError):
    """Face orientations are inconsistent (a directed edge repeats)."""


class TopologyError(MeshError):
    """The mesh is not a topological disk (boundary loops, connectivity)."""


class TriMesh:
    """Immutable indexed triangle mesh with 2D or 3D vertices.

    Parameters
    ----------
    vertices : (n, 2) or (n, 3) array_like
        Vertex coordinates. The second-axis length fixes the dimension.
    faces : (m, 3) array_like of int
        Vertex index triples, counter-clockwise in 2D.
    gray : (n,) array_like or None
        Optional per-vertex scalar in [0, 1].

    Construction validates index ranges, manifoldness (every edge has at most
    two incident faces) and orientation consistency. All arrays are stored
    read-only; meshes are safe to share across threads.
    """

    def __init__(self, vertices, faces, gray=None):
        v = np.array(vertices, dtype=np.float64)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise MeshError(f"vertices must be (n, 2) or (n, 3), got {v.shape}")
        if v.shape[0] < 3:
            raise MeshError("a triangle mesh needs at least 3 vertices")
        if not np.isfinite(v).all():
            raise MeshError("non-finite vertex coordinate")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (m, 3), got {f.shape}")
        if f.shape[0] == 0:
            raise MeshError("mesh has no faces")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise MeshError("face index out of range")
        if ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])).any():
            raise MeshError("a face repeats a vertex")
        referenced = np.zeros(v.shape[0], dtype=bool)
        referenced[f.ravel()] = True
        if not referenced.all():
            raise MeshError("vertex not referenced by any face")

        n = v.shape[0]
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        edges, counts = np.unique(undirected, axis=0, return_counts=True)
        if counts.max() > 2:
            bad = edges[counts > 2][0]
            raise NonManifoldError(
                f"edge ({bad[0]}, {bad[1]}) has {counts.max()} incident faces"
            )
        codes = directed[:, 0] * n + directed[:, 1]
        if np.unique(codes).size != codes.size:
            raise OrientationError(
                "inconsistent orientation: a directed edge appears twice"
            )

        boundary_flags = np.zeros(n, dtype=bool)
        boundary_flags[edges[counts == 1].ravel()] = True

        if gray is not None:
            g = np.array(gray, dtype=np.float64)
            if g.shape != (n,):
                raise MeshError(f"gray must be ({n},), got {g.shape}")
            if not np.isfinite(g).all() or g.min() < -1e-9 or g.max() > 1 + 1e-9:
                raise MeshError("gray values must lie in [0, 1]")
            g = np.clip(g, 0.0, 1.0)
            g.setflags(write=False)
        else:
            g = None

        for arr in (v, f, edges, counts, boundary_flags):
            arr.setflags(write=False)
        self.vertices = v
        self.faces = f
        self.gray = g
        self.boundary_flags = boundary_flags
        self._edges = edges
        self._edge_counts = counts

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def is_2d(self) -> bool:
        return self.vertices.shape[1] == 2

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) rows, lexicographic order."""
        return self._edges

    @property
    def boundary_edges(self) -> np.ndarray:
        return self._edges[self._edge_counts == 1]

    @cached_property
    def _neighbor_csr(self):
        both = np.concatenate([self._edges, self._edges[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        indptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.add.at(indptr, both[:, 0] + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, np.ascontiguousarray(both[:, 1])

    def vertex_neighbors(self, i: int) -> np.ndarray:
        indptr, indices = self._neighbor_csr
        return indices[indptr[i]:indptr[i + 1]]

    def with_vertices(self, vertices) -> "TriMesh":
        """Same connectivity and gray channel with new vertex positions."""
        return TriMesh(vertices, self.faces, self.gray)

    def face_areas(self) -> np.ndarray:
        """Unsigned face areas (norm of the cross product over two)."""
        v = self.vertices
        f = self.faces
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        if self.is_2d:
            return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def signed_face_areas(self) -> np.ndarray:
        if not self.is_2d:
            raise MeshError("signed areas are defined for 2D meshes only")
        v = self.vertices
        f = self.faces
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def __repr__(self):
        dim = 2 if self.is_2d else 3
        g = ", gray" if self.gray is not None else ""
        return f"TriMesh({self.n_vertices} vertices, {self.n_faces} faces, {dim}D{g})"


@dataclass(frozen=True)
class EdgeWeightMap:
    """Symmetric per-edge weights, defined exactly on the mesh edges.

    ``edges`` holds sorted (i, j) pairs, ``weights`` the matching values.
    """

    edges: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != 2 or w.shape != (e.shape[0],):
            raise ValueError("edges must be (E, 2) and weights (E,)")
        if (e[:, 0] >= e[:, 1]).any():
            raise ValueError("edges must be sorted pairs with i < j")
        e.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "weights", w)

    @cached_property
    def _index(self):
        return {(int(i), int(j)): k for k, (i, j) in enumerate(self.edges)}

    def __len__(self):
        return self.edges.shape[0]

    def __iter__(self):
        for (i, j), w in zip(self.edges, self.weights):
            yield (int(i), int(j)), float(w)

    def __contains__(self, pair):
        i, j = pair
        return (min(i, j), max(i, j)) in self._index

    def __getitem__(self, pair) -> float:
        i, j = pair
        key = (min(int(i), int(j)), max(int(i), int(j)))
        try:
            return float(self.weights[self._index[key]])
        except KeyError:
            raise KeyError(f"({i}, {j}) is not a mesh edge") from None

    def clamped(self, floor: float = 0.0) -> "EdgeWeightMap":
        """Weights floored at ``floor`` (robustness option for obtuse meshes)."""
        return EdgeWeightMap(self.edges, np.maximum(self.weights, floor))


# ---------------------------------------------------------------------------
# local quantities


def vertex_areas(mesh: TriMesh) -> np.ndarray:
    """One third of the incident face area, for every vertex at once."""
    fa = mesh.face_areas()
    out = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(out, mesh.faces[:, k], fa / 3.0)
    return out


def vertex_area(mesh: TriMesh, i: int) -> float:
    """One third of the total area of the faces incident to vertex ``i``."""
    if not 0 <= i < mesh.n_vertices:
        raise MeshError(f"vertex index {i} out of range")
    mask = (mesh.faces == i).any(axis=1)
    return float(mesh.face_areas()[mask].sum() / 3.0)


def _face_edge_lengths(mesh: TriMesh, edge_lengths=None) -> np.ndarray:
    """(m, 3) lengths, column k opposite corner k of each face."""
    f = mesh.faces
    if edge_lengths is None:
        v = mesh.vertices
        out = np.empty((f.shape[0], 3))
        for k in range(3):
            i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
            out[:, k] = np.linalg.norm(v[i] - v[j], axis=1)
        return out
    if isinstance(edge_lengths, EdgeWeightMap):
        lookup = dict(iter(edge_lengths))
    elif isinstance(edge_lengths, dict):
        lookup = {
            (min(i, j), max(i, j)): float(l) for (i, j), l in edge_lengths.items()
        }
    else:
        arr = np.asarray(edge_lengths, dtype=np.float64)
        if arr.shape != (mesh.edges.shape[0],):
            raise MeshError("edge length array must align with mesh.edges")
        lookup = {
            (int(i), int(j)): float(l) for (i, j), l in zip(mesh.edges, arr)
        }
    out = np.empty((f.shape[0], 3))
    for k in range(3):
        i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        for r in range(f.shape[0]):
            key = (min(i[r], j[r]), max(i[r], j[r]))
            if key not in lookup:
                raise MeshError(f"missing override length for edge {key}")
            out[r, k] = lookup[key]
    return out


def _heron_areas(lengths: np.ndarray) -> np.ndarray:
    a, b, c = lengths[:, 0], lengths[:, 1], lengths[:, 2]
    # numerically stable Heron form
    t = (a + b + c) * (-a + b + c) * (a - b + c) * (a + b - c)
    return 0.25 * np.sqrt(np.maximum(t, 0.0))


def cot_weights_for_faces(
    faces: np.ndarray, n_vertices: int, lengths: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Cotangent edge weights for a face list with prescribed edge lengths.

    ``lengths`` is (m, 3) with column k the length opposite corner k. Returns
    sorted unique edges and accumulated weights: interior edges receive the two
    opposite cotangents, boundary edges a single one. Raises :class:`MeshError`
    on triangles degenerate under the supplied lengths.
    """

    areas = _heron_areas(lengths)
    max_l = lengths.max(axis=1)
    bad = areas < DEGENERACY_FACTOR * max_l**2
    if bad.any():
        raise MeshError(
            f"degenerate triangle under the supplied edge lengths (face row {np.nonzero(bad)[0][0]})"
        )
    sq = lengths**2
    cots = np.empty_like(lengths)
    for k in range(3):
        a2 = sq[:, k]
        b2 = sq[:, (k + 1) % 3]
        c2 = sq[:, (k + 2) % 3]
        cots[:, k] = (b2 + c2 - a2) / (4.0 * areas)

    pairs = np.concatenate(
        [np.sort(faces[:, [(k + 1) % 3, (k + 2) % 3]], axis=1) for k in range(3)]
    )
    vals = np.concatenate([cots[:, k] for k in range(3)])
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    weights = np.zeros(edges.shape[0])
    np.add.at(weights, inverse.ravel(), vals)
    return edges, weights


def cotangent_weights(mesh: TriMesh, edge_lengths=None) -> EdgeWeightMap:
    """Cotangent edge weights of a mesh, optionally under overridden lengths.

    Angles come from the (possibly overridden) edge lengths through the law of
    cosines, so the weights depend only on the intrinsic metric.
    """

    lengths = _face_edge_lengths(mesh, edge_lengths)
    edges, weights = cot_weights_for_faces(mesh.faces, mesh.n_vertices, lengths)
    return EdgeWeightMap(edges, weights)


def uniform_weights(mesh: TriMesh) -> EdgeWeightMap:
    """Unit weight on every edge (graph Laplacian)."""
    return EdgeWeightMap(mesh.edges, np.ones(mesh.edges.shape[0]))


def boundary_loop(mesh: TriMesh) -> np.ndarray:
    """Boundary vertices as one closed CCW loop.

    Starts at the lowest-index boundary vertex. Raises :class:`TopologyError`
    when the mesh is closed or has more than one loop.
    """

    f = mesh.faces
    n = mesh.n_vertices
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    codes = directed[:, 0] * n + directed[:, 1]
    reverse = directed[:, 1] * n + directed[:, 0]
    bd = directed[~np.isin(reverse, codes)]
    if bd.shape[0] == 0:
        raise TopologyError("mesh is closed: no boundary loop")
    succ = np.full(n, -1, dtype=np.int64)
    for i, j in bd:
        if succ[i] != -1:
            raise TopologyError(f"vertex {i} lies on more than one boundary curve")
        succ[i] = j
    start = int(bd[:, 0].min())
    loop = [start]
    cur = int(succ[start])
    while cur != start:
        if cur < 0 or len(loop) > bd.shape[0]:
            raise TopologyError("boundary walk did not close")
        loop.append(cur)
        cur = int(succ[cur])
    if len(loop) != bd.shape[0]:
        raise TopologyError(
            f"multiple boundary loops: walked {len(loop)} of {bd.shape[0]} edges"
        )
    return np.array(loop, dtype=np.int64)


def flipped_faces(mesh: TriMesh) -> np.ndarray:
    """Indices of faces with non-positive signed area (2D meshes).

    An empty result certifies orientation preservation.
    """

    return np.nonzero(mesh.signed_face_areas() <= 0.0)[0]


def is_connected(mesh: TriMesh) -> bool:
    indptr, indices = mesh._neighbor_csr
    seen = np.zeros(mesh.n_vertices, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in indices[indptr[i]:indptr[i + 1]]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


# ---------------------------------------------------------------------------
# image sampling and grid meshes


def _image_extent(shape) -> tuple[float, float]:
    """Half extents (sx, sy) of the aspect-corrected rectangle in [-1, 1]^2."""
    h, w = shape
    if w >= h:
        return 1.0, h / w
    return w / h, 1.0


def sample_image(image: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear samples of a grayscale image at 2D domain positions.

    The image spans the aspect-corrected rectangle centered in [-1, 1]^2 with
    row 0 at the top. Positions outside are clamped to the edge.
    """

    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise MeshError("image must be a non-empty 2D array")
    h, w = img.shape
    sx, sy = _image_extent(img.shape)
    pts = np.asarray(points, dtype=np.float64)
    u = (pts[:, 0] / sx + 1.0) / 2.0 * (w - 1) if w > 1 else np.zeros(len(pts))
    v = (1.0 - pts[:, 1] / sy) / 2.0 * (h - 1) if h > 1 else np.zeros(len(pts))
    u = np.clip(u, 0.0, w - 1)
    v = np.clip(v, 0.0, h - 1)
    u0 = np.clip(np.floor(u).astype(int), 0, max(w - 2, 0))
    v0 = np.clip(np.floor(v).astype(int), 0, max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    top = img[v0, u0] * (1 - fu) + img[v0, u1] * fu
    bot = img[v1, u0] * (1 - fu) + img[v1, u1] * fu
    return top * (1 - fv) + bot * fv


def image_to_mesh(image: np.ndarray, resolution: int) -> TriMesh:
    """Regular grid mesh over the image with bilinearly sampled gray values.

    ``resolution`` vertices per side on the aspect-corrected rectangle in
    [-1, 1]^2; each quad splits along its lower-left to upper-right diagonal.
    """

    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise MeshError("image must be a non-empty 2D array")
    n = int(resolution)
    if n < 2:
        raise MeshError("resolution must be at least 2")
    sx, sy = _image_extent(img.shape)
    xs = np.linspace(-sx, sx, n)
    ys = np.linspace(-sy, sy, n)
    xx, yy = np.meshgrid(xs, ys)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    faces = []
    for iy in range(n - 1):
        for ix in range(n - 1):
            v00 = iy * n + ix
            v10 = v00 + 1
            v01 = v00 + n
            v11 = v01 + 1
            faces.append((v00, v10, v11))
            faces.append((v00, v11, v01))
    gray = np.clip(sample_image(img, vertices), 0.0, 1.0)
    return TriMesh(vertices, np.array(faces, dtype=np.int64), gray)


# ---------------------------------------------------------------------------
# file I/O


def _infer_format(path: str, fmt) -> str:
    if fmt is not None:
        f = str(fmt).lower()
    else:
        f = str(path).rsplit(".", 1)[-1].lower()
    if f not in ("obj", "off"):
        raise MeshError(f"unsupported mesh format {f!r} (use obj or off)")
    return f


def _parse_obj(text: str):
    verts, colors, faces = [], [], []
    for ln, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        key = parts[0]
        if key == "v":
            vals = parts[1:]
            if len(vals) not in (3, 6):
                raise MeshError(f"line {ln}: vertex needs 3 or 6 numbers")
            try:
                nums = [float(t) for t in vals]
            except ValueError:
                raise MeshError(f"line {ln}: bad vertex number") from None
            verts.append(nums[:3])
            colors.append(nums[3:6] if len(nums) == 6 else None)
        elif key == "f":
            idx = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise MeshError(f"line {ln}: bad face index {tok!r}") from None
                if i <= 0:
                    raise MeshError(f"line {ln}: face indices must be positive")
                idx.append(i - 1)
            if len(idx) != 3:
                raise MeshError(f"line {ln}: only triangle faces are supported")
            faces.append(idx)
    if not verts or not faces:
        raise MeshError("OBJ file has no vertices or no faces")
    has_color = [c is not None for c in colors]
    if any(has_color) and not all(has_color):
        raise MeshError("OBJ mixes colored and uncolored vertices")
    gray = None
    if all(has_color):
        rgb = np.array(colors, dtype=np.float64)
        gray = rgb @ np.array(_LUMA)
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64), gray


def _parse_off(text: str):
    tokens = []
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        tokens.extend(body.split())
    pos = 0
    if tokens and tokens[0].upper() == "OFF":
        pos = 1
    try:
        nv, nf = int(tokens[pos]), int(tokens[pos + 1])
        pos += 3  # skip the edge count
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            cnt = int(tokens[pos])
            if cnt != 3:
                raise MeshError("only triangle faces are supported in OFF input")
            faces.append([int(t) for t in tokens[pos + 1:pos + 4]])
            pos += 1 + cnt
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError("malformed OFF file") from None
    if nv == 0 or nf == 0:
        raise MeshError("OFF file has no vertices or no faces")
    return verts, np.array(faces, dtype=np.int64), None


def load_mesh(path, format=None) -> TriMesh:
    """Load a single-component disk-topology mesh from an OBJ or OFF file.

    Vertices whose third coordinate is exactly zero throughout load as a 2D
    mesh. OBJ vertex colors populate the gray channel through their luminance.
    """

    fmt = _infer_format(path, format)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    verts3, faces, gray = _parse_obj(text) if fmt == "obj" else _parse_off(text)
    if np.all(verts3[:, 2] == 0.0):
        verts = verts3[:, :2]
    else:
        verts = verts3
    mesh = TriMesh(verts, faces, gray)
    if not is_connected(mesh):
        raise TopologyError("mesh has more than one connected component")
    boundary_loop(mesh)  # raises when not a disk
    return mesh


def save_mesh(mesh: TriMesh, path, format=None) -> None:
    """Write a mesh as OBJ or OFF text.

    OBJ carries the gray channel as per-vertex colors; OFF stores geometry
    only. Coordinates round-trip exactly (written with repr precision).
    """

    fmt = _infer_format(path, format)
    v = mesh.vertices
    if mesh.is_2d:
        v = np.column_stack([v, np.zeros(mesh.n_vertices)])
    lines = []
    if fmt == "obj":
        for i in range(mesh.n_vertices):
            coord = " ".join(f"{c:.17g}" for c in v[i])
            if mesh.gray is not None:
                g = f"{mesh.gray[i]:.17g}"
                lines.append(f"v {coord} {g} {g} {g}")
            else:
                lines.append(f"v {coord}")
        for a, b, c in mesh.faces:
            lines.append(f"f {a + 1} {b + 1} {c + 1}")
    else:
        lines.append("OFF")
        lines.append(f"{mesh.n_vertices} {mesh.n_faces} {mesh.edges.shape[0]}")
        for i in range(mesh.n_vertices):
            lines.append(" ".join(f"{c:.17g}" for c in v[i]))
        for a, b, c in mesh.faces:
            lines.append(f"3 {a} {b} {c}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
