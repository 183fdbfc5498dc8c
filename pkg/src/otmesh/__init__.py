"""Topology-preserving semi-discrete optimal transport for triangle meshes.

The library transports a planar triangulation toward a prescribed per-vertex
measure by Newton iteration on power-diagram heights, then removes flips and
large angle distortion with patch-wise quasiconformal correction, never
touching the mesh connectivity. 3D disk-topology surfaces enter through a
harmonic parameterization; a temporal variant emits the full trajectory.
"""

from .harmonic import (
    FlipError,
    LaplaceProblem,
    SolveError,
    harmonic_map_disk,
    harmonic_map_rect,
    pick_corners,
    solve_laplace,
)
from .measures import (
    measure_area_preserving,
    measure_image,
    measure_roi,
    measure_uniform,
    roi_scales_from_specs,
)
from .mesh import (
    EdgeWeightMap,
    MeshError,
    NonManifoldError,
    OrientationError,
    TopologyError,
    TriMesh,
    boundary_loop,
    cotangent_weights,
    flipped_faces,
    image_to_mesh,
    load_mesh,
    sample_image,
    save_mesh,
    uniform_weights,
    vertex_area,
    vertex_areas,
)
from .pipeline import (
    Diagnostics,
    TemporalSequence,
    TransportConfig,
    TransportMap,
    measure_diagnostics,
    temporal_transport,
    trajectories_svg,
    transport_map,
)
from .powerdiagram import (
    GeometryError,
    PowerDiagram,
    Rect,
    cell_area_centroid,
    clip_polygon,
    default_domain,
    diagram_to_svg,
    kernel_backend,
    lower_convex_hull,
    power_diagram,
)
from .quasiconformal import (
    BeltramiField,
    CorrectionReport,
    Patch,
    auxiliary_metric,
    beltrami_field,
    face_beltrami,
    gamma_ring,
    mu_csv,
    qc_correct,
    vertex_beltrami,
)
from .solver import (
    MeasureSpec,
    NewtonState,
    TransportResult,
    hessian,
    history_csv,
    init_heights,
    measures_from_diagram,
    newton_step,
    optimize_heights,
    solve_relaxed_ot,
)

__version__ = "0.1.0"
