import numpy as np
import pytest
from numpy.testing import assert_allclose

from otmesh import (
    FlipError,
    LaplaceProblem,
    MeshError,
    TriMesh,
    boundary_loop,
    cotangent_weights,
    flipped_faces,
    harmonic_map_disk,
    harmonic_map_rect,
    pick_corners,
    solve_laplace,
    uniform_weights,
)
from conftest import disk_mesh, grid_mesh, hemisphere_mesh


def star_mesh():
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    faces = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 1)]
    return TriMesh(verts, faces)


def test_star_center_is_average():
    m = star_mesh()
    sol = solve_laplace(
        LaplaceProblem(5, uniform_weights(m), np.array([1, 2, 3, 4]),
                       np.array([1.0, 2.0, 3.0, 4.0]))
    )
    assert sol[0] == pytest.approx(2.5, abs=1e-12)


def test_constant_boundary_gives_constant():
    m = grid_mesh(6, jitter=0.2, seed=5)
    b = np.nonzero(m.boundary_flags)[0]
    sol = solve_laplace(
        LaplaceProblem(m.n_vertices, cotangent_weights(m), b, np.full(b.size, 3.25))
    )
    assert_allclose(sol, 3.25, atol=1e-10)


def test_linear_reproduction_cotangent():
    m = grid_mesh(9, jitter=0.25, seed=11)
    f = 1.3 * m.vertices[:, 0] - 0.4 * m.vertices[:, 1]
    b = np.nonzero(m.boundary_flags)[0]
    sol = solve_laplace(
        LaplaceProblem(m.n_vertices, cotangent_weights(m), b, f[b])
    )
    assert np.abs(sol - f).max() < 1e-9


def test_laplace_residual_and_exact_boundary():
    m = grid_mesh(8, jitter=0.2, seed=2)
    w = cotangent_weights(m)
    b = np.nonzero(m.boundary_flags)[0]
    vals = np.sin(3.0 * m.vertices[b, 0])
    sol = solve_laplace(LaplaceProblem(m.n_vertices, w, b, vals))
    assert np.array_equal(sol[b], vals)  # bit-exact boundary
    # interior residual of the weighted Laplacian
    res = np.zeros(m.n_vertices)
    for (i, j), wij in w:
        res[i] += wij * (sol[i] - sol[j])
        res[j] += wij * (sol[j] - sol[i])
    scale = max(np.abs(vals).max(), 1.0)
    inner = ~m.boundary_flags
    assert np.abs(res[inner]).max() <= 1e-10 * scale


def test_maximum_principle_uniform_weights(rng):
    m = grid_mesh(7, jitter=0.2, seed=7)
    b = np.nonzero(m.boundary_flags)[0]
    vals = rng.uniform(-2.0, 5.0, b.size)
    sol = solve_laplace(LaplaceProblem(m.n_vertices, uniform_weights(m), b, vals))
    assert sol.min() >= vals.min() - 1e-12
    assert sol.max() <= vals.max() + 1e-12


def test_complex_boundary_values():
    m = star_mesh()
    vals = np.array([1 + 1j, 2 - 1j, -1 + 0.5j, 0.5 + 2j])
    sol = solve_laplace(LaplaceProblem(5, uniform_weights(m), np.array([1, 2, 3, 4]), vals))
    assert sol[0] == pytest.approx(vals.mean())


def test_boundary_required():
    m = star_mesh()
    with pytest.raises(ValueError):
        LaplaceProblem(5, uniform_weights(m), np.array([], dtype=int), np.array([]))


# ---------------------------------------------------------------------------
# disk map


def test_disk_map_planar_disk_no_flips():
    m = disk_mesh(5)
    out = harmonic_map_disk(m)
    assert flipped_faces(out).size == 0
    loop = boundary_loop(out)
    assert_allclose(np.linalg.norm(out.vertices[loop], axis=1), 1.0, atol=1e-12)


def test_disk_map_hemisphere_area():
    m = hemisphere_mesh(8)
    out = harmonic_map_disk(m)
    assert flipped_faces(out).size == 0
    total = out.face_areas().sum()
    assert total == pytest.approx(np.pi, rel=0.02)


def test_disk_map_boundary_count_on_circle():
    m = hemisphere_mesh(5)
    loop = boundary_loop(m)
    out = harmonic_map_disk(m)
    r = np.linalg.norm(out.vertices[loop], axis=1)
    assert np.abs(r - 1.0).max() < 1e-12
    assert loop.size == 30


# ---------------------------------------------------------------------------
# rectangle map


def test_rect_map_identity_on_square():
    m = grid_mesh(7)
    n = 7
    corners = [0, n - 1, n * n - 1, n * n - n]
    out = harmonic_map_rect(m, corners)
    assert np.abs(out.vertices - m.vertices).max() < 1e-9


def test_rect_map_rotated_corners_still_harmonic():
    m = grid_mesh(5)
    loop = boundary_loop(m).tolist()
    corners = [0, 4, 24, 20]
    k = [loop.index(c) for c in corners]
    rotated = [loop[(i + 1) % len(loop)] for i in k]
    try:
        out = harmonic_map_rect(m, rotated)
    except FlipError as err:
        # squeezing a corner arc into a side may fold faces; the Dirichlet
        # solve itself must still be harmonic on the reported mesh
        out = err.mesh
    w = cotangent_weights(m)
    res = np.zeros((m.n_vertices, 2))
    for (i, j), wij in w:
        res[i] += wij * (out.vertices[i] - out.vertices[j])
        res[j] += wij * (out.vertices[j] - out.vertices[i])
    inner = ~m.boundary_flags
    assert np.abs(res[inner]).max() < 1e-10


def test_rect_map_duplicate_corner_rejected():
    m = grid_mesh(5)
    with pytest.raises(MeshError):
        harmonic_map_rect(m, [0, 0, 24, 20])


def test_rect_map_noncyclic_corners_rejected():
    m = grid_mesh(5)
    with pytest.raises(MeshError):
        harmonic_map_rect(m, [0, 24, 4, 20])


def test_pick_corners_deterministic():
    m = disk_mesh(4)
    c1 = pick_corners(m)
    c2 = pick_corners(m)
    assert c1 == c2
    assert len(set(c1)) == 4


def test_flip_error_reports_faces_and_mesh():
    from otmesh import EdgeWeightMap

    m = disk_mesh(4)
    w = cotangent_weights(m)
    weights = w.weights.copy()
    # sabotage one interior edge with a huge negative weight: the harmonic
    # image folds there and the flip check must fire with details attached
    inner_edges = ~m.boundary_flags[w.edges].any(axis=1)
    weights[np.nonzero(inner_edges)[0][0]] = -50.0
    bad = EdgeWeightMap(w.edges, weights)
    with pytest.raises(FlipError) as info:
        harmonic_map_disk(m, weights=bad)
    assert info.value.faces.size > 0
    assert flipped_faces(info.value.mesh).size == info.value.faces.size
