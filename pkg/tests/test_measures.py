import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from otmesh import (
    MeshError,
    TriMesh,
    measure_area_preserving,
    measure_image,
    measure_roi,
    measure_uniform,
    roi_scales_from_specs,
    vertex_areas,
)
from conftest import grid_mesh, hemisphere_mesh


def test_uniform_n4():
    assert_allclose(measure_uniform(4).nu, 0.25)


def test_uniform_n1():
    assert_allclose(measure_uniform(1).nu, 1.0)


def test_uniform_exact_sum():
    assert measure_uniform(861).nu.sum() == pytest.approx(1.0, abs=1e-15)


def test_area_measure_planar_matches_vertex_areas():
    m = grid_mesh(5, jitter=0.2, seed=4)
    spec = measure_area_preserving(m)
    a = vertex_areas(m)
    assert_allclose(spec.nu, a / a.sum(), atol=1e-15)


def test_area_measure_scale_invariant():
    m = hemisphere_mesh(4)
    big = TriMesh(2.0 * m.vertices, m.faces)
    assert_allclose(
        measure_area_preserving(m).nu, measure_area_preserving(big).nu, atol=1e-14
    )


def test_area_measure_symmetric_cap():
    m = hemisphere_mesh(4)
    spec = measure_area_preserving(m)
    # the six ring-1 vertices are symmetric, so their masses agree
    ring1 = spec.nu[1:7]
    assert_allclose(ring1, ring1[0], rtol=1e-12)


def test_roi_identity_scalar():
    m = grid_mesh(6)
    spec = measure_roi(m, np.ones(m.n_vertices, bool), 1.0)
    a = vertex_areas(m)
    assert_allclose(spec.nu, a / a.sum(), atol=1e-15)


def test_roi_global_scaling_cancels():
    m = grid_mesh(6)
    all_in = np.ones(m.n_vertices, bool)
    assert_allclose(measure_roi(m, all_in, 3.0).nu, measure_roi(m, all_in, 1.0).nu)


def test_roi_half_plane_mass_ratio():
    m = grid_mesh(8)
    mask = m.vertices[:, 0] > 0
    spec = measure_roi(m, mask, 2.0)
    a = vertex_areas(m)
    expected = 2 * a[mask].sum() / (2 * a[mask].sum() + a[~mask].sum())
    assert spec.nu[mask].sum() == pytest.approx(expected, abs=1e-12)


def test_roi_predicate_callable():
    m = grid_mesh(6)
    spec = measure_roi(m, lambda v: v[:, 0] ** 2 + v[:, 1] ** 2 < 0.25, 3.0)
    assert spec.nu.sum() == pytest.approx(1.0, abs=1e-12)


def test_roi_specs_compose_by_max():
    m = grid_mesh(9)
    specs = [
        {"shape": "circle", "cx": 0.0, "cy": 0.0, "r": 0.5, "k": 2.0},
        {"shape": "rect", "xmin": -0.1, "ymin": -0.1, "xmax": 1.0, "ymax": 1.0, "k": 3.0},
    ]
    mask, k_arr = roi_scales_from_specs(m, specs)
    inside_both = (np.linalg.norm(m.vertices, axis=1) <= 0.5) & (
        (m.vertices[:, 0] >= -0.1) & (m.vertices[:, 1] >= -0.1)
    )
    assert (k_arr[inside_both] == 3.0).all()
    assert mask.any()


def test_image_measure_direct_substitution():
    # raw value k (delta + gray) a before normalization
    v = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    m = TriMesh(v, [(0, 1, 2), (0, 2, 3)], gray=np.array([1.0, 0.0, 1.0, 0.0]))
    spec = measure_image(m, k=4.0, delta=0.02)
    a = vertex_areas(m)
    raw = 4.0 * (0.02 + m.gray) * a
    assert_allclose(spec.nu, raw / raw.sum(), atol=1e-15)


def test_image_measure_black_image_reduces_to_areas():
    m = grid_mesh(5)
    mm = TriMesh(m.vertices, m.faces, gray=np.zeros(m.n_vertices))
    spec = measure_image(mm, k=4.0, delta=0.02)
    a = vertex_areas(mm)
    assert_allclose(spec.nu, a / a.sum(), atol=1e-13)


def test_image_measure_contrast_ratio():
    # equal-area vertices with gray 1 and 0: ratio (1 + delta) / delta = 51
    v = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    m = TriMesh(v, [(0, 1, 2), (0, 2, 3)], gray=np.array([1.0, 0.5, 0.0, 0.5]))
    spec = measure_image(m, k=4.0, delta=0.02)
    # vertices 0 and 2 both touch both faces: equal areas
    assert spec.nu[0] / spec.nu[2] == pytest.approx(1.02 / 0.02, rel=1e-12)


def test_image_measure_strictly_positive():
    m = grid_mesh(5)
    mm = TriMesh(m.vertices, m.faces, gray=np.zeros(m.n_vertices))
    assert (measure_image(mm, 1.0, 0.05).nu > 0).all()


def test_image_measure_requires_gray():
    m = grid_mesh(4)
    bare = TriMesh(m.vertices, m.faces)
    with pytest.raises(MeshError):
        measure_image(bare, 1.0, 0.02)


@settings(max_examples=40, deadline=None)
@given(k=st.floats(0.1, 100.0))
def test_k_rescaling_invariance(k):
    m = grid_mesh(5)
    mm = TriMesh(m.vertices, m.faces, gray=np.linspace(0, 1, m.n_vertices))
    base = measure_image(mm, 1.0, 0.1).nu
    scaled = measure_image(mm, k, 0.1).nu
    assert np.abs(base - scaled).max() < 1e-14
