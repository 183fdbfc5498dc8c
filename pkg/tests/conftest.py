"""Shared mesh builders and test images."""

import logging

import numpy as np
import pytest

from otmesh import TriMesh, image_to_mesh

# patch-level warnings from extreme instances flood test logs
logging.getLogger("otmesh.quasiconformal").setLevel(logging.ERROR)
logging.getLogger("otmesh.solver").setLevel(logging.ERROR)
logging.getLogger("otmesh.pipeline").setLevel(logging.ERROR)


def grid_mesh(n: int, jitter: float = 0.0, seed: int = 0) -> TriMesh:
    """n x n vertex grid on [-1, 1]^2, optionally with jittered interior."""
    mesh = image_to_mesh(np.zeros((4, 4)), n)
    if jitter == 0.0:
        return mesh
    rng = np.random.default_rng(seed)
    v = mesh.vertices.copy()
    inner = ~mesh.boundary_flags
    step = 2.0 / (n - 1)
    v[inner] += rng.uniform(-jitter, jitter, (int(inner.sum()), 2)) * step
    return TriMesh(v, mesh.faces)


def disk_mesh(rings: int) -> TriMesh:
    """Planar unit disk triangulation: center fan plus angular-merge annuli."""
    verts = [(0.0, 0.0)]
    starts = [0, 1]
    for k in range(1, rings + 1):
        m = 6 * k
        r = k / rings
        for j in range(m):
            t = 2.0 * np.pi * j / m
            verts.append((r * np.cos(t), r * np.sin(t)))
        starts.append(starts[-1] + m)

    faces = []
    for j in range(6):
        faces.append((0, 1 + j, 1 + (j + 1) % 6))
    for k in range(2, rings + 1):
        sa, ma = starts[k - 1], 6 * (k - 1)
        sb, mb = starts[k], 6 * k
        i = j = 0
        while i < ma or j < mb:
            advance_inner = j >= mb or (i < ma and (i + 1) / ma <= (j + 1) / mb)
            if advance_inner:
                faces.append((sa + i % ma, sb + j % mb, sa + (i + 1) % ma))
                i += 1
            else:
                faces.append((sb + j % mb, sb + (j + 1) % mb, sa + i % ma))
                j += 1
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))


def hemisphere_mesh(rings: int) -> TriMesh:
    """Unit upper hemisphere over the disk triangulation."""
    flat = disk_mesh(rings)
    v = flat.vertices
    z = np.sqrt(np.maximum(0.0, 1.0 - (v**2).sum(axis=1)))
    return TriMesh(np.column_stack([v, z]), flat.faces)


def two_blob_image(size: int = 64, radius: float = 0.22, hard: bool = False) -> np.ndarray:
    """Two bright spots on a dark background, soft or hard edged."""
    ys, xs = np.mgrid[0:size, 0:size]
    x = xs / (size - 1) * 2.0 - 1.0
    y = 1.0 - ys / (size - 1) * 2.0
    img = np.zeros((size, size))
    for cx, cy in ((-0.45, 0.0), (0.45, 0.0)):
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        spot = (d2 < radius**2).astype(float) if hard else np.exp(-d2 / (2 * radius**2))
        img = np.maximum(img, spot)
    return img


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
