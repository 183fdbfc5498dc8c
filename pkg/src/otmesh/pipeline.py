"""End-to-end transport pipeline and its temporal variant.

A run parameterizes the input surface to a planar domain (identity for meshes
that are already planar), builds the target measure, solves the relaxed
transport, and applies the quasiconformal correction when the distortion
exceeds the configured threshold. The temporal variant emits a corrected,
flip-free mesh for every solver iteration, with corrections feeding back into
the running positions. Outputs are deterministic for a fixed configuration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

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
from .mesh import TriMesh, cotangent_weights, flipped_faces, uniform_weights
from .powerdiagram import Rect, default_domain, power_diagram
from .quasiconformal import BeltramiField, CorrectionReport, beltrami_field, qc_correct
from .solver import (
    MeasureSpec,
    TransportResult,
    init_heights,
    measures_from_diagram,
    solve_relaxed_ot,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TransportConfig",
    "TransportMap",
    "TemporalSequence",
    "Diagnostics",
    "transport_map",
    "temporal_transport",
    "measure_diagnostics",
    "trajectories_svg",
    "diagnostics_csv",
]

DOMAINS = ("disk", "square")
MEASURES = ("area", "uniform", "roi", "image")


@dataclass(frozen=True)
class TransportConfig:
    """Hyper-parameters of a transport run.

    ``eps_tol`` is the gradient-norm stopping tolerance, ``eps_distortion``
    the Beltrami threshold that triggers correction, ``gamma`` the patch ring
    radius, ``omega_scale`` the factor growing the reference domain beyond
    the target bounding square.
    """

    eps_tol: float = 1e-5
    eps_distortion: float = 0.7
    gamma: int = 2
    lambda0: float = 1.0
    omega_scale: float = 1.2
    max_iter: int = 1000
    domain: str = "disk"
    measure: str = "uniform"
    k: float = 1.0
    delta: float = 0.02
    rois: tuple = ()
    corners: tuple | None = None
    clamp_weights: bool = False

    def __post_init__(self):
        if not 0.0 < self.eps_distortion <= 1.0:
            raise ValueError("eps_distortion must lie in (0, 1]")
        if self.eps_tol <= 0:
            raise ValueError("eps_tol must be positive")
        if self.omega_scale <= 1.0:
            raise ValueError("omega_scale must exceed 1")
        if self.gamma < 1:
            raise ValueError("gamma must be a positive integer")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}")
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class Diagnostics:
    """Per-vertex convergence fields: rho = |omega - nu|, psi = nu / omega."""

    rho: np.ndarray
    psi: np.ndarray
    defined: np.ndarray
    rho_max: float
    rho_mean: float
    histogram: tuple


def measure_diagnostics(nu, omega, bins: int = 20) -> Diagnostics:
    """Compare achieved against prescribed measures.

    ``psi`` is undefined (NaN) on empty cells, where ``rho`` reduces to the
    prescribed mass.
    """

    nu = nu.nu if isinstance(nu, MeasureSpec) else np.asarray(nu, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    rho = np.abs(omega - nu)
    defined = omega > 0.0
    psi = np.full(nu.shape, np.nan)
    psi[defined] = nu[defined] / omega[defined]
    counts, edges = np.histogram(rho, bins=bins, range=(0.0, max(rho.max(), 1e-300)))
    return Diagnostics(
        rho=rho,
        psi=psi,
        defined=defined,
        rho_max=float(rho.max()),
        rho_mean=float(rho.mean()),
        histogram=(counts, edges),
    )


@dataclass
class TransportMap:
    """The composed map: parameter positions per input vertex, then the
    transported positions, sharing the input connectivity throughout."""

    parameter_mesh: TriMesh
    mhat: TriMesh
    measure: MeasureSpec
    transport: TransportResult
    mu: BeltramiField
    corrected: bool
    correction: CorrectionReport | None
    diagnostics: Diagnostics
    domain: Rect

    @property
    def phi(self) -> np.ndarray:
        """Vertex table of the parameterization stage."""
        return self.parameter_mesh.vertices

    @property
    def converged(self) -> bool:
        return self.transport.converged

    @property
    def flips(self) -> np.ndarray:
        return flipped_faces(self.mhat)

    @property
    def clean(self) -> bool:
        """Converged without stalls or skipped correction patches."""
        return (
            self.converged
            and not self.transport.stalled
            and (self.correction is None or self.correction.clean)
        )


@dataclass
class TemporalSequence:
    """Transport trajectory: one corrected mesh per solver iteration.

    ``frames[0]`` is the parameter mesh at time 0; times are normalized
    iteration indices; all frames share one face list.
    """

    frames: list
    times: np.ndarray
    rho_max: np.ndarray
    flip_counts: np.ndarray
    psi: list
    result: TransportMap

    def __len__(self):
        return len(self.frames)


def _parameterize(mesh: TriMesh, cfg: TransportConfig) -> TriMesh:
    if mesh.is_2d:
        return mesh
    try:
        if cfg.domain == "disk":
            return harmonic_map_disk(mesh, clamp_negative=cfg.clamp_weights)
        corners = cfg.corners if cfg.corners else pick_corners(mesh)
        return harmonic_map_rect(mesh, corners, clamp_negative=cfg.clamp_weights)
    except FlipError as exc:
        logger.warning("%s; retrying with uniform weights", exc)
        if cfg.domain == "disk":
            return harmonic_map_disk(mesh, weights="uniform")
        corners = cfg.corners if cfg.corners else pick_corners(mesh)
        return harmonic_map_rect(mesh, corners, weights="uniform")


def _build_measure(input_mesh: TriMesh, m0: TriMesh, cfg: TransportConfig) -> MeasureSpec:
    if cfg.measure == "area":
        return measure_area_preserving(input_mesh)
    if cfg.measure == "uniform":
        return measure_uniform(m0.n_vertices)
    if cfg.measure == "roi":
        if not cfg.rois:
            raise ValueError("roi measure requires at least one ROI spec")
        mask, k_arr = roi_scales_from_specs(m0, cfg.rois)
        return measure_roi(m0, mask, k_arr)
    return measure_image(m0, cfg.k, cfg.delta)


def _relax_parked(m0: TriMesh, mhat: TriMesh, parked: np.ndarray) -> TriMesh:
    """Re-seat vertices parked by empty cells among their moved neighbors.

    Parked vertices keep stale coordinates that can sit on top of the moved
    geometry, producing flip clusters no local remap can undo (their fixed
    rings are stale too). A harmonic solve with the non-parked vertices fixed
    interpolates them smoothly; a no-op when no cell is empty.
    """

    fixed = np.nonzero(~parked)[0]
    weights = cotangent_weights(m0)
    try:
        positions = solve_laplace(
            LaplaceProblem(m0.n_vertices, weights, fixed, mhat.vertices[fixed])
        )
    except SolveError:
        positions = solve_laplace(
            LaplaceProblem(m0.n_vertices, uniform_weights(m0), fixed,
                           mhat.vertices[fixed])
        )
    return mhat.with_vertices(positions)


def _correct_if_needed(m0, mhat, cfg, parked=None):
    changed = False
    if parked is not None and parked.any():
        mhat = _relax_parked(m0, mhat, parked)
        changed = True
    mu = beltrami_field(m0, mhat)
    if mu.sup_norm() > cfg.eps_distortion or mu.has_flips:
        corrected, report = qc_correct(
            m0, mhat, mu, cfg.eps_distortion, gamma=cfg.gamma
        )
        return mu, corrected, True, report
    return mu, mhat, changed, None


def transport_map(mesh: TriMesh, cfg: TransportConfig | None = None, **overrides) -> TransportMap:
    """Run the full pipeline on a surface or planar mesh.

    3D input is first parameterized harmonically to the configured domain;
    planar input is used as the parameter mesh directly. The returned map
    keeps the input face list bit-identically and is flip-free whenever the
    correction pass completed without skipped patches.
    """

    cfg = replace(cfg or TransportConfig(), **overrides)
    m0 = _parameterize(mesh, cfg)
    nu = _build_measure(mesh, m0, cfg)
    rect = default_domain(m0.vertices, cfg.omega_scale)
    result = solve_relaxed_ot(
        m0, nu, rect,
        eps_tol=cfg.eps_tol, lambda0=cfg.lambda0, max_iter=cfg.max_iter,
    )
    mu, mhat, corrected, report = _correct_if_needed(
        m0, result.mhat, cfg, parked=result.diagram.empty_mask
    )
    diag = measure_diagnostics(nu, result.state.omega)
    return TransportMap(
        parameter_mesh=m0,
        mhat=mhat,
        measure=nu,
        transport=result,
        mu=mu,
        corrected=corrected,
        correction=report,
        diagnostics=diag,
        domain=rect,
    )


def temporal_transport(
    mesh: TriMesh, cfg: TransportConfig | None = None, **overrides
) -> TemporalSequence:
    """Transport trajectory with per-iteration correction.

    Every frame is corrected when its distortion exceeds the threshold, so
    each intermediate mesh preserves topology and orientation; corrections
    feed back into the running positions (heights evolve on the uncorrected
    dynamics). The final frame coincides with the plain pipeline result.
    """

    cfg = replace(cfg or TransportConfig(), **overrides)
    m0 = _parameterize(mesh, cfg)
    nu = _build_measure(mesh, m0, cfg)
    rect = default_domain(m0.vertices, cfg.omega_scale)

    frames = [m0]
    psi_list = []
    rho_list = []
    flip_list = []
    reports = []
    mu_last = [None]

    pd0 = power_diagram(m0.vertices, init_heights(m0.vertices), rect)
    d0 = measure_diagnostics(nu, measures_from_diagram(pd0))
    psi_list.append(d0.psi)
    rho_list.append(d0.rho_max)
    flip_list.append(flipped_faces(m0).size)

    def observer(iteration, frame, state):
        mu, corrected, did, report = _correct_if_needed(
            m0, frame, cfg, parked=state.diagram.empty_mask
        )
        mu_last[0] = mu
        if report is not None:
            reports.append(report)
        frames.append(corrected)
        d = measure_diagnostics(nu, state.omega)
        psi_list.append(d.psi)
        rho_list.append(d.rho_max)
        flip_list.append(flipped_faces(corrected).size)
        return corrected.vertices if did else None

    result = solve_relaxed_ot(
        m0, nu, rect,
        eps_tol=cfg.eps_tol, lambda0=cfg.lambda0, max_iter=cfg.max_iter,
        observer=observer,
    )

    total = max(len(frames) - 1, 1)
    times = np.arange(len(frames)) / total
    mhat = frames[-1]
    mu = mu_last[0] if mu_last[0] is not None else beltrami_field(m0, mhat)
    merged = CorrectionReport(
        n_bad=sum(r.n_bad for r in reports),
        corrected=[c for r in reports for c in r.corrected],
        skipped=[s for r in reports for s in r.skipped],
        warnings=[w for r in reports for w in r.warnings],
    )
    final = TransportMap(
        parameter_mesh=m0,
        mhat=mhat,
        measure=nu,
        transport=result,
        mu=mu,
        corrected=bool(reports),
        correction=merged if reports else None,
        diagnostics=measure_diagnostics(nu, result.state.omega),
        domain=rect,
    )
    return TemporalSequence(
        frames=frames,
        times=times,
        rho_max=np.array(rho_list),
        flip_counts=np.array(flip_list, dtype=np.int64),
        psi=psi_list,
        result=final,
    )


# ---------------------------------------------------------------------------
# exports


def trajectories_svg(seq: TemporalSequence, width: int = 720) -> str:
    """Vertex trajectories through all frames as SVG polylines."""

    rect = seq.result.domain
    w = rect.xmax - rect.xmin
    h = rect.ymax - rect.ymin

    def fmt(x):
        return f"{x:.6f}"

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{int(round(width * h / w))}" '
        f'viewBox="{fmt(rect.xmin)} {fmt(-rect.ymax)} {fmt(w)} {fmt(h)}">',
        f'<g transform="scale(1,-1)" fill="none" stroke="black" '
        f'stroke-width="{fmt(0.001 * max(w, h))}" stroke-opacity="0.6">',
    ]
    stacked = np.stack([f.vertices for f in seq.frames])
    for i in range(stacked.shape[1]):
        pts = " ".join(f"{fmt(x)},{fmt(y)}" for x, y in stacked[:, i, :])
        lines.append(f'<polyline points="{pts}"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def diagnostics_csv(diag: Diagnostics) -> str:
    """Per-vertex rho and psi as CSV text (psi empty on undefined cells)."""
    lines = ["vertex,rho,psi"]
    for i, (r, p) in enumerate(zip(diag.rho, diag.psi)):
        p_s = f"{p:.12g}" if np.isfinite(p) else ""
        lines.append(f"{i},{r:.12g},{p_s}")
    return "\n".join(lines) + "\n"
