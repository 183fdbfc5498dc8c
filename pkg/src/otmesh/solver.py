"""Relaxed semi-discrete optimal transport on the height vector.

Newton iteration drives the per-cell measures omega(h) of the power diagram
toward a prescribed target: solve Hess d = grad with grad = nu - omega, then
step h <- h + lambda d, halving lambda until the gradient norm decreases.
Empty cells are allowed (the relaxation), so the Hessian has exactly-zero
rows; the system is solved on the active block (Tikhonov plus the zero-mean
gauge covering its constant null space) while empty cells get an explicit
move back to their re-insertion height. The connectivity of the transported
mesh is never modified: output vertices are the cell mass centers under the
input face list.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .mesh import TriMesh
from .powerdiagram import PowerDiagram, Rect, default_domain, power_diagram

logger = logging.getLogger(__name__)

__all__ = [
    "MeasureSpec",
    "NewtonState",
    "TransportResult",
    "SolverError",
    "init_heights",
    "measures_from_diagram",
    "hessian",
    "newton_step",
    "optimize_heights",
    "solve_relaxed_ot",
    "history_csv",
]

LAMBDA_MIN = 1e-10
REG_SCALE = 1e-12


class SolverError(RuntimeError):
    """Linear solve failure inside the Newton iteration."""


@dataclass(frozen=True)
class MeasureSpec:
    """Normalized target measure per site plus the strategy that produced it."""

    nu: np.ndarray
    strategy: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=np.float64)
        if nu.ndim != 1 or nu.size == 0:
            raise ValueError("nu must be a non-empty vector")
        if (nu < 0).any():
            raise ValueError("measures must be non-negative")
        if abs(nu.sum() - 1.0) > 1e-12:
            raise ValueError("measures must sum to 1 (use from_values to normalize)")
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)

    @classmethod
    def from_values(cls, values, strategy: str = "custom", **params) -> "MeasureSpec":
        """Normalize raw non-negative values into a measure."""
        v = np.asarray(values, dtype=np.float64)
        total = v.sum()
        if total <= 0:
            raise ValueError("measure values must have positive total")
        return cls(v / total, strategy, dict(params))

    def __len__(self):
        return self.nu.size


@dataclass
class NewtonState:
    """One Newton iterate: heights, gradient, direction, damping, history."""

    h: np.ndarray
    grad: np.ndarray
    d: np.ndarray
    lam: float
    iteration: int
    diagram: PowerDiagram
    omega: np.ndarray
    stalled: bool = False
    history: list = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


@dataclass
class TransportResult:
    """Outcome of a relaxed transport solve on a mesh.

    ``mhat`` holds the cell mass centers under the input connectivity;
    ``assignment[i] = i`` records the center-to-site correspondence.
    """

    mhat: TriMesh
    assignment: np.ndarray
    diagram: PowerDiagram
    history: list
    converged: bool
    stalled: bool
    state: NewtonState

    @property
    def grad_norm(self) -> float:
        return self.state.grad_norm


def init_heights(sites) -> np.ndarray:
    """Heights whose power diagram is the Voronoi diagram of the sites.

    The lifted lower hull of (p, -h) with h = -|p|^2 / 2 is the paraboloid
    lift, so the projected diagram is Voronoi; the height vector is returned
    mean-subtracted (heights are unique up to an additive constant).
    """

    s = np.asarray(sites, dtype=np.float64)
    h = -0.5 * (s**2).sum(axis=1)
    return h - h.mean()


def measures_from_diagram(pd: PowerDiagram, rect: Rect | None = None) -> np.ndarray:
    """Cell measures under the uniform density: omega_i = area_i / area(domain)."""
    r = rect if rect is not None else pd.rect
    return pd.areas / r.area


def hessian(pd: PowerDiagram) -> sparse.csr_matrix:
    """Jacobian of the cell measures with respect to the heights.

    Off-diagonal (i, j) entries are -(L_ij / area(domain)) / |p_i - p_j| for
    adjacent cells with shared edge length L_ij; diagonals are the negated row
    sums, so rows sum to zero and empty cells give zero rows.
    """

    n = pd.n_sites
    pairs = pd.adj_pairs
    if pairs.shape[0] == 0:
        return sparse.csr_matrix((n, n))
    i, j = pairs[:, 0], pairs[:, 1]
    dist = np.linalg.norm(pd.sites[i] - pd.sites[j], axis=1)
    off = -(pd.adj_lengths / pd.rect.area) / dist
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([off, off, -off, -off])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _evaluate(sites, h, rect, nu):
    pd = power_diagram(sites, h, rect)
    omega = measures_from_diagram(pd)
    return pd, omega, nu - omega


def _revival_direction(pd: PowerDiagram, h: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Height moves that lift empty cells back to the support of the diagram.

    The lowest height at which site i reappears is
    min over x in the domain of (u_h(x) - <x, p_i>), a piecewise-linear convex
    function whose minimum sits at a vertex of the clipped diagram, so it is
    exact and cheap to read off the cell polygons. A margin sized for the
    target measure (area ~ pi (margin/slope)^2 near the touching point) gives
    the revived cell a claim of roughly nu_i; the step damping tempers any
    overshoot.
    """

    empty = np.nonzero(pd.empty_mask)[0]
    d = np.zeros(h.size)
    if empty.size == 0:
        return d
    indptr = pd._poly_indptr
    counts = np.diff(indptr)
    owners = np.repeat(np.arange(pd.n_sites), counts)
    verts = pd._poly_coords
    if verts.shape[0] == 0:
        return d
    u_vals = (verts * pd.sites[owners]).sum(axis=1) + h[owners]
    for i in empty:
        vals = u_vals - verts @ pd.sites[i]
        k = int(np.argmin(vals))
        touch = float(vals[k])
        slope = float(np.linalg.norm(pd.sites[owners[k]] - pd.sites[i]))
        if slope == 0.0:
            slope = 1.0
        margin = slope * np.sqrt(nu[i] * pd.rect.area / np.pi)
        d[i] = touch + margin - h[i]
    return d


def _history_row(state: NewtonState, nu: np.ndarray):
    return (
        state.iteration,
        state.grad_norm,
        state.lam,
        int(state.diagram.empty_mask.sum()),
        float(np.abs(nu - state.omega).max()),
    )


def newton_step(
    state: NewtonState,
    nu: np.ndarray,
    rect: Rect,
    lambda0: float = 1.0,
) -> NewtonState:
    """One damped Newton step on the heights.

    Solves (Hess + eps I) d = grad on the zero-mean subspace of the non-empty
    cells with eps = 1e-12 trace/n, adds the revival moves for empty cells,
    then halves lambda from ``lambda0`` until the gradient norm decreases.
    If lambda underflows without any trial beating the current iterate, the
    iterate is kept and the stall flag raised. Accepted heights are
    mean-subtracted.
    """

    n = state.h.size
    H = hessian(state.diagram)
    # Empty cells contribute exactly-zero rows; their heights carry no Newton
    # information, so the system is solved on the active block and empty cells
    # are revived passively when neighboring heights drop. The Tikhonov term
    # covers the remaining constant null space (zero row sums).
    active = H.diagonal() > 0.0
    d = np.zeros(n)
    if active.any():
        Ha = H[active][:, active]
        na = int(active.sum())
        eps = REG_SCALE * (Ha.diagonal().sum() / na)
        A = (Ha + eps * sparse.identity(na, format="csr")).tocsc()
        try:
            da = spsolve(A, state.grad[active])
        except Exception as exc:  # pragma: no cover - scipy-internal failures
            raise SolverError(f"Newton linear solve failed: {exc}") from exc
        if not np.isfinite(da).all():
            raise SolverError("Newton linear solve returned non-finite direction")
        d[active] = da - da.mean()
    d += _revival_direction(state.diagram, state.h, nu)

    g0 = state.grad_norm
    lam = float(lambda0)
    best = (g0, state.h, state.diagram, state.omega, state.grad, 0.0)
    stalled = False
    while True:
        h_t = state.h + lam * d
        h_t -= h_t.mean()
        pd_t, omega_t, grad_t = _evaluate(state.diagram.sites, h_t, rect, nu)
        gn = float(np.linalg.norm(grad_t))
        if gn < best[0]:
            best = (gn, h_t, pd_t, omega_t, grad_t, lam)
        if gn < g0:
            break
        lam *= 0.5
        if lam < LAMBDA_MIN:
            # no trial beat the current iterate; keep it and flag the stall
            stalled = True
            logger.warning(
                "step %d stalled: no gradient decrease above lambda=%.1e",
                state.iteration + 1,
                LAMBDA_MIN,
            )
            break
    _, h_t, pd_t, omega_t, grad_t, lam_acc = best
    new = NewtonState(
        h=h_t,
        grad=grad_t,
        d=d,
        lam=lam_acc,
        iteration=state.iteration + 1,
        diagram=pd_t,
        omega=omega_t,
        stalled=state.stalled or stalled,
        history=state.history,
    )
    new.history.append(_history_row(new, nu))
    return new


def optimize_heights(
    sites,
    nu,
    rect: Rect,
    eps_tol: float = 1e-5,
    lambda0: float = 1.0,
    max_iter: int = 1000,
    iteration_hook=None,
) -> tuple[NewtonState, bool]:
    """Run the Newton iteration from the Voronoi start until |grad| <= eps_tol.

    Returns the final state and a convergence flag; non-convergence within
    ``max_iter`` is reported, not raised. ``iteration_hook`` is called with
    the state after every accepted step.
    """

    sites = np.asarray(sites, dtype=np.float64)
    nu = nu.nu if isinstance(nu, MeasureSpec) else np.asarray(nu, dtype=np.float64)
    if nu.shape != (sites.shape[0],):
        raise ValueError("nu must hold one value per site")
    if abs(nu.sum() - 1.0) > 1e-9:
        raise ValueError("nu must sum to 1")

    h0 = init_heights(sites)
    pd, omega, grad = _evaluate(sites, h0, rect, nu)
    state = NewtonState(
        h=h0, grad=grad, d=np.zeros_like(h0), lam=float("nan"),
        iteration=0, diagram=pd, omega=omega,
    )
    state.history.append(_history_row(state, nu))
    while state.grad_norm > eps_tol and state.iteration < max_iter:
        prev_norm = state.grad_norm
        state = newton_step(state, nu, rect, lambda0)
        if iteration_hook is not None:
            iteration_hook(state)
        if state.stalled and state.grad_norm >= prev_norm:
            # the iteration map is deterministic: a no-progress stall repeats
            break
    converged = state.grad_norm <= eps_tol
    if not converged:
        logger.warning(
            "no convergence after %d iterations: |grad| = %.3e",
            state.iteration, state.grad_norm,
        )
    return state, converged


def solve_relaxed_ot(
    mesh0: TriMesh,
    nu,
    omega_rect: Rect | None = None,
    eps_tol: float = 1e-5,
    lambda0: float = 1.0,
    max_iter: int = 1000,
    observer=None,
) -> TransportResult:
    """Transport the mesh vertices as sites of the relaxed solve.

    The result mesh keeps the input face list bit-identically and places each
    vertex at its cell mass center; vertices whose cell is empty keep their
    previous position, so the trajectory stays continuous. ``observer`` is
    called each iteration with (iteration, mesh, state); when it returns a
    position array, those positions replace the running ones (the temporal
    pipeline feeds corrected frames back this way).
    """

    if not mesh0.is_2d:
        raise ValueError("transport operates on a 2D mesh")
    sites = mesh0.vertices
    rect = omega_rect if omega_rect is not None else default_domain(sites)
    positions = np.array(sites, dtype=np.float64)

    def hook(state: NewtonState):
        nonlocal positions
        nonempty = ~state.diagram.empty_mask
        positions[nonempty] = state.diagram.centroids[nonempty]
        frame = mesh0.with_vertices(positions.copy())
        if observer is not None:
            ret = observer(state.iteration, frame, state)
            if ret is not None:
                ret = np.asarray(ret, dtype=np.float64)
                if ret.shape != positions.shape:
                    raise ValueError("observer returned positions of wrong shape")
                positions = ret.copy()

    state, converged = optimize_heights(
        sites, nu, rect, eps_tol=eps_tol, lambda0=lambda0,
        max_iter=max_iter, iteration_hook=hook,
    )
    mhat = mesh0.with_vertices(positions)
    return TransportResult(
        mhat=mhat,
        assignment=np.arange(mesh0.n_vertices),
        diagram=state.diagram,
        history=state.history,
        converged=converged,
        stalled=state.stalled,
        state=state,
    )


def history_csv(history) -> str:
    """Convergence log as CSV text."""
    lines = ["iter,grad_norm,lambda,empty_cells,max_abs_dev"]
    for it, gn, lam, empty, dev in history:
        lam_s = f"{lam:.12g}" if np.isfinite(lam) else ""
        lines.append(f"{it},{gn:.12g},{lam_s},{empty},{dev:.12g}")
    return "\n".join(lines) + "\n"
