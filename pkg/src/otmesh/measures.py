"""Target measure constructors driving the transport.

Four strategies: surface vertex areas (area-preserving maps), a uniform value
(mesh equalization), scaled regions of interest, and grayscale intensity.
Each returns a normalized :class:`~otmesh.solver.MeasureSpec`; rescaling the
customization scalars globally leaves the measure, and therefore the entire
downstream transport, unchanged.
"""

from __future__ import annotations

import numpy as np

from .mesh import MeshError, TriMesh, vertex_areas
from .solver import MeasureSpec

__all__ = [
    "measure_area_preserving",
    "measure_uniform",
    "measure_roi",
    "measure_image",
    "roi_scales_from_specs",
]


def measure_area_preserving(mesh: TriMesh) -> MeasureSpec:
    """Measure proportional to the vertex areas of the (usually 3D) mesh."""
    return MeasureSpec.from_values(vertex_areas(mesh), "area")


def measure_uniform(n: int) -> MeasureSpec:
    """Equal mass 1/n at every vertex."""
    if n < 1:
        raise ValueError("need at least one vertex")
    return MeasureSpec(np.full(n, 1.0 / n), "uniform", {"n": n})


def _roi_mask(mesh: TriMesh, roi) -> np.ndarray:
    if callable(roi):
        mask = np.asarray(roi(mesh.vertices), dtype=bool)
    else:
        mask = np.asarray(roi, dtype=bool)
    if mask.shape != (mesh.n_vertices,):
        raise MeshError("ROI mask must hold one flag per vertex")
    return mask


def measure_roi(mesh2d: TriMesh, roi, k) -> MeasureSpec:
    """Vertex-area measure with the region of interest scaled by ``k``.

    ``roi`` is a boolean mask or a predicate on the vertex positions; ``k`` a
    scalar or per-vertex array applied inside the region.
    """

    mask = _roi_mask(mesh2d, roi)
    k_arr = np.broadcast_to(np.asarray(k, dtype=np.float64), (mesh2d.n_vertices,))
    if (k_arr < 0).any():
        raise ValueError("ROI scale must be non-negative")
    a = vertex_areas(mesh2d)
    values = np.where(mask, k_arr * a, a)
    return MeasureSpec.from_values(
        values, "roi", k=float(k) if np.isscalar(k) else "per-vertex"
    )


def roi_scales_from_specs(mesh2d: TriMesh, specs) -> tuple[np.ndarray, np.ndarray]:
    """Mask and per-vertex scale from declarative ROI specs.

    Each spec is a circle ``{"shape": "circle", "cx", "cy", "r", "k"}`` or an
    axis-aligned rectangle ``{"shape": "rect", "xmin", "ymin", "xmax",
    "ymax", "k"}``; overlapping regions compose by the maximum scale.
    """

    v = mesh2d.vertices
    mask = np.zeros(mesh2d.n_vertices, dtype=bool)
    k_arr = np.ones(mesh2d.n_vertices)
    for spec in specs:
        shape = spec.get("shape", "circle")
        k = float(spec.get("k", 1.0))
        if shape == "circle":
            inside = (v[:, 0] - spec["cx"]) ** 2 + (v[:, 1] - spec["cy"]) ** 2 <= spec["r"] ** 2
        elif shape == "rect":
            inside = (
                (v[:, 0] >= spec["xmin"]) & (v[:, 0] <= spec["xmax"])
                & (v[:, 1] >= spec["ymin"]) & (v[:, 1] <= spec["ymax"])
            )
        else:
            raise ValueError(f"unknown ROI shape {shape!r}")
        mask |= inside
        k_arr[inside] = np.maximum(k_arr[inside], k)
    return mask, k_arr


def measure_image(mesh2d: TriMesh, k: float = 1.0, delta: float = 0.02) -> MeasureSpec:
    """Grayscale-driven measure: k (delta + gray) times the vertex area.

    ``delta`` keeps the measure strictly positive where the image is black;
    brighter vertices claim more mass, so bright regions expand under the
    transport.
    """

    if mesh2d.gray is None:
        raise MeshError("mesh has no gray channel")
    if delta <= 0:
        raise ValueError("delta must be positive")
    values = k * (delta + mesh2d.gray) * vertex_areas(mesh2d)
    return MeasureSpec.from_values(values, "image", k=float(k), delta=float(delta))
