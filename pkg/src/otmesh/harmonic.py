"""Sparse weighted Laplace solves and harmonic parameterizations.

The discrete Laplacian of a vertex function f is
sum_j w_ij (f_i - f_j) over the incident edges; a solve makes it vanish at
every interior vertex while boundary values are kept bit-exactly. Harmonic
maps to a convex domain (disk or rectangle) built on these solves are
diffeomorphisms for positive weights; negative cotangent weights from obtuse
triangles are accepted as-is by default, with an optional clamp for
robustness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg

from .mesh import (
    EdgeWeightMap,
    MeshError,
    TriMesh,
    boundary_loop,
    cotangent_weights,
    flipped_faces,
    uniform_weights,
)

__all__ = [
    "LaplaceProblem",
    "SolveError",
    "FlipError",
    "solve_laplace",
    "harmonic_map_disk",
    "harmonic_map_rect",
    "pick_corners",
]


class SolveError(RuntimeError):
    """The linear system was singular or the iteration cap was reached."""


class FlipError(RuntimeError):
    """A harmonic map produced flipped faces (possible with negative weights).

    Carries the offending mesh and face indices so callers can retry with
    uniform weights.
    """

    def __init__(self, message, mesh=None, faces=None):
        super().__init__(message)
        self.mesh = mesh
        self.faces = faces


@dataclass(frozen=True)
class LaplaceProblem:
    """Dirichlet problem: weighted Laplace equation with prescribed boundary.

    ``boundary_values`` may be real, complex, or stacked columns (B, k); the
    solution has the same trailing shape.
    """

    n_vertices: int
    weights: EdgeWeightMap
    boundary_idx: np.ndarray
    boundary_values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundary_idx, dtype=np.int64)
        v = np.asarray(self.boundary_values)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("boundary set must be nonempty")
        if np.unique(b).size != b.size:
            raise ValueError("boundary indices repeat")
        if b.min() < 0 or b.max() >= self.n_vertices:
            raise ValueError("boundary index out of range")
        if v.shape[0] != b.shape[0]:
            raise ValueError("boundary values must align with boundary indices")
        object.__setattr__(self, "boundary_idx", b)
        object.__setattr__(self, "boundary_values", v)


def _laplacian(n: int, wmap: EdgeWeightMap) -> sparse.csr_matrix:
    e = wmap.edges
    w = wmap.weights
    rows = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0], e[:, 0], e[:, 1]])
    vals = np.concatenate([-w, -w, w, w])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _cg_solve(A, b, rtol, maxiter):
    if np.linalg.norm(b) == 0.0:
        return np.zeros_like(b)
    d = A.diagonal().copy()
    d[d <= 0.0] = 1.0
    M = LinearOperator(A.shape, matvec=lambda x: x / d)
    x, info = cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    if info != 0:
        raise SolveError(f"conjugate gradient did not converge (info={info})")
    return x


def solve_laplace(problem: LaplaceProblem, rtol: float = 1e-12) -> np.ndarray:
    """Solve the Dirichlet problem; interior Laplace residual <= 1e-10 relative.

    Conjugate gradient with Jacobi preconditioning, iteration cap ten times
    the vertex count. Complex boundary data is solved as two real systems.
    """

    n = problem.n_vertices
    bidx = problem.boundary_idx
    bvals = np.asarray(problem.boundary_values)
    interior = np.setdiff1d(np.arange(n), bidx)
    out_shape = (n,) + bvals.shape[1:]
    out = np.zeros(out_shape, dtype=bvals.dtype if bvals.dtype.kind == "c" else np.float64)
    out[bidx] = bvals
    if interior.size == 0:
        return out

    degree = np.zeros(n, dtype=np.int64)
    np.add.at(degree, problem.weights.edges.ravel(), 1)
    if (degree[interior] == 0).any():
        raise SolveError("an interior vertex has no incident edge")

    L = _laplacian(n, problem.weights)
    A = L[interior][:, interior].tocsr()
    B = L[interior][:, bidx].tocsr()
    maxiter = 10 * n

    cols = bvals.reshape(bvals.shape[0], -1)
    sol_cols = []
    for k in range(cols.shape[1]):
        col = cols[:, k]
        b = -B @ col
        if np.iscomplexobj(col):
            x = _cg_solve(A, b.real, rtol, maxiter) + 1j * _cg_solve(
                A, b.imag, rtol, maxiter
            )
        else:
            x = _cg_solve(A, b, rtol, maxiter)
        sol_cols.append(x)
    sol = np.stack(sol_cols, axis=-1).reshape((interior.size,) + bvals.shape[1:])
    out[interior] = sol
    return out


def _select_weights(mesh: TriMesh, weights, clamp_negative: bool) -> EdgeWeightMap:
    if isinstance(weights, EdgeWeightMap):
        w = weights
    elif weights == "cotangent":
        w = cotangent_weights(mesh)
    elif weights == "uniform":
        w = uniform_weights(mesh)
    else:
        raise ValueError(f"unknown weight scheme {weights!r}")
    if clamp_negative:
        w = w.clamped(0.0)
    return w


def _loop_chords(mesh: TriMesh, loop: np.ndarray) -> np.ndarray:
    pts = mesh.vertices[loop]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    if (seg == 0).any():
        raise MeshError("boundary loop contains a zero-length edge")
    return seg


def _check_flips(mesh2d: TriMesh, label: str) -> TriMesh:
    bad = flipped_faces(mesh2d)
    if bad.size:
        raise FlipError(
            f"{label} produced {bad.size} flipped faces; retry with uniform weights",
            mesh=mesh2d,
            faces=bad,
        )
    return mesh2d


def harmonic_map_disk(
    mesh: TriMesh, weights="cotangent", clamp_negative: bool = False
) -> TriMesh:
    """Harmonic map of a disk-topology mesh onto the unit disk.

    The boundary loop goes to the unit circle with chord-length proportional
    spacing; the interior solves the weighted Laplace equation. Raises
    :class:`FlipError` when the image contains flipped faces.
    """

    loop = boundary_loop(mesh)
    seg = _loop_chords(mesh, loop)
    s = np.concatenate([[0.0], np.cumsum(seg[:-1])])
    theta = 2.0 * np.pi * s / seg.sum()
    bvals = np.column_stack([np.cos(theta), np.sin(theta)])
    w = _select_weights(mesh, weights, clamp_negative)
    sol = solve_laplace(
        LaplaceProblem(mesh.n_vertices, w, loop, bvals)
    )
    out = TriMesh(sol, mesh.faces, mesh.gray)
    return _check_flips(out, "harmonic disk map")


def harmonic_map_rect(
    mesh: TriMesh, corners, weights="cotangent", clamp_negative: bool = False
) -> TriMesh:
    """Harmonic map onto [-1, 1]^2 with four boundary vertices at the corners.

    ``corners`` must be distinct boundary vertices in counter-clockwise cyclic
    order; the four boundary arcs map to the sides with chord-length
    proportional spacing.
    """

    corners = [int(c) for c in corners]
    if len(corners) != 4 or len(set(corners)) != 4:
        raise MeshError("need 4 distinct corner vertices")
    loop = boundary_loop(mesh)
    pos = {int(v): k for k, v in enumerate(loop)}
    try:
        at = [pos[c] for c in corners]
    except KeyError as exc:
        raise MeshError(f"corner {exc.args[0]} is not a boundary vertex") from None
    # rotate the loop to start at the first corner
    loop = np.roll(loop, -at[0])
    pos = {int(v): k for k, v in enumerate(loop)}
    at = [pos[c] for c in corners]
    if not (0 == at[0] < at[1] < at[2] < at[3]):
        raise MeshError("corners are not in cyclic order along the boundary")

    seg = _loop_chords(mesh, loop)
    square = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    bvals = np.empty((loop.size, 2))
    splits = at + [loop.size]
    for side in range(4):
        lo, hi = splits[side], splits[side + 1]
        idx = np.arange(lo, hi)
        arc = seg[lo:hi]
        total = arc.sum()
        frac = np.concatenate([[0.0], np.cumsum(arc[:-1])]) / total
        a, b = square[side], square[(side + 1) % 4]
        bvals[idx] = a + frac[:, None] * (b - a)

    w = _select_weights(mesh, weights, clamp_negative)
    sol = solve_laplace(LaplaceProblem(mesh.n_vertices, w, loop, bvals))
    out = TriMesh(sol, mesh.faces, mesh.gray)
    return _check_flips(out, "harmonic rectangle map")


def pick_corners(mesh: TriMesh) -> list[int]:
    """Four boundary vertices at the arc-length quartile points (deterministic)."""
    loop = boundary_loop(mesh)
    seg = _loop_chords(mesh, loop)
    s = np.concatenate([[0.0], np.cumsum(seg[:-1])]) / seg.sum()
    out = []
    for target in (0.0, 0.25, 0.5, 0.75):
        k = int(np.argmin(np.abs(s - target)))
        out.append(int(loop[k]))
    if len(set(out)) != 4:
        raise MeshError("boundary too short to pick four distinct corners")
    return out
