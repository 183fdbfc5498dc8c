"""Command-line front end.

Subcommands: ``param`` (surface parameterization), ``image`` (image-driven
mesh editing), ``temporal`` (transport trajectory export), ``powerdiagram``
(debug SVG of a diagram). Options can come from a JSON config file, with
command-line flags taking precedence; unknown config keys are rejected.

Exit codes: 0 success; 2 configuration error; 3 input error; 4 solver did not
converge or stalled; 5 correction incomplete (skipped patches).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .mesh import (
    MeshError,
    TriMesh,
    image_to_mesh,
    load_mesh,
    sample_image,
    save_mesh,
)
from .mesh import _image_extent
from .pipeline import (
    TransportConfig,
    diagnostics_csv,
    temporal_transport,
    trajectories_svg,
    transport_map,
)
from .powerdiagram import GeometryError, Rect, diagram_to_svg, power_diagram
from .quasiconformal import mu_csv
from .solver import history_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_NOCONV = 4
EXIT_CORRECTION = 5

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".tif", ".tiff"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Transport configuration plus I/O and export options."""

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
    resolution: int = 64
    output_dir: str = "."
    svg: bool = False
    csv: bool = True
    frames: bool = False
    quad: bool = False

    def transport(self) -> TransportConfig:
        return TransportConfig(
            eps_tol=self.eps_tol,
            eps_distortion=self.eps_distortion,
            gamma=self.gamma,
            lambda0=self.lambda0,
            omega_scale=self.omega_scale,
            max_iter=self.max_iter,
            domain=self.domain,
            measure=self.measure,
            k=self.k,
            delta=self.delta,
            rois=tuple(self.rois),
            corners=tuple(self.corners) if self.corners else None,
            clamp_weights=self.clamp_weights,
        )


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "rois" in data:
        data["rois"] = tuple(data["rois"])
    if "corners" in data and data["corners"] is not None:
        data["corners"] = tuple(int(c) for c in data["corners"])
    return data


def parse_roi_flag(text: str) -> dict:
    """``circle:cx,cy,r,k`` or ``rect:xmin,ymin,xmax,ymax,k``."""
    try:
        shape, rest = text.split(":", 1)
        nums = [float(t) for t in rest.split(",")]
        if shape == "circle" and len(nums) == 4:
            return {"shape": "circle", "cx": nums[0], "cy": nums[1],
                    "r": nums[2], "k": nums[3]}
        if shape == "rect" and len(nums) == 5:
            return {"shape": "rect", "xmin": nums[0], "ymin": nums[1],
                    "xmax": nums[2], "ymax": nums[3], "k": nums[4]}
    except ValueError:
        pass
    raise ConfigError(f"bad ROI spec {text!r}")


def build_config(args) -> RunConfig:
    data = load_config(args.config) if args.config else {}
    cfg = replace(RunConfig(), **data)
    overrides = {}
    for name in _CONFIG_KEYS:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "roi", None):
        overrides["rois"] = tuple(parse_roi_flag(t) for t in args.roi)
    cfg = replace(cfg, **overrides)
    cfg.transport()  # validate early
    return cfg


# ---------------------------------------------------------------------------
# image helpers


def load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def save_image(image: np.ndarray, path) -> None:
    from PIL import Image

    data = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(path)


def warp_image(image: np.ndarray, m0: TriMesh, mhat: TriMesh,
               background: float = 1.0) -> np.ndarray:
    """Push the image through the piecewise-linear map m0 -> mhat.

    Every output pixel covered by a deformed triangle is sampled from the
    source image at the barycentrically matched position (inverse-map
    bilinear sampling); uncovered pixels take the background value.
    """

    h, w = image.shape
    sx, sy = _image_extent(image.shape)
    out = np.full((h, w), background)
    ucol = np.arange(w)
    vrow = np.arange(h)
    xs = (2.0 * ucol / max(w - 1, 1) - 1.0) * sx
    ys = (1.0 - 2.0 * vrow / max(h - 1, 1)) * sy

    tgt = mhat.vertices
    src = m0.vertices
    for tri in mhat.faces:
        a, b, c = tgt[tri[0]], tgt[tri[1]], tgt[tri[2]]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        if det == 0.0:
            continue
        lo_x = np.searchsorted(xs, min(a[0], b[0], c[0]) - 1e-12)
        hi_x = np.searchsorted(xs, max(a[0], b[0], c[0]) + 1e-12)
        # ys is decreasing: use the reversed view
        lo_y = np.searchsorted(-ys, -(max(a[1], b[1], c[1]) + 1e-12))
        hi_y = np.searchsorted(-ys, -(min(a[1], b[1], c[1]) - 1e-12))
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        px, py = np.meshgrid(xs[lo_x:hi_x], ys[lo_y:hi_y])
        w1 = ((b[0] - px) * (c[1] - py) - (c[0] - px) * (b[1] - py)) / det
        w2 = ((c[0] - px) * (a[1] - py) - (a[0] - px) * (c[1] - py)) / det
        w3 = 1.0 - w1 - w2
        inside = (w1 >= -1e-12) & (w2 >= -1e-12) & (w3 >= -1e-12)
        if not inside.any():
            continue
        pts = (
            w1[inside, None] * src[tri[0]]
            + w2[inside, None] * src[tri[1]]
            + w3[inside, None] * src[tri[2]]
        )
        vals = sample_image(image, pts)
        block = out[lo_y:hi_y, lo_x:hi_x]
        block[inside] = vals
    return out


def grid_quads(mesh: TriMesh) -> np.ndarray:
    """Merge the grid's triangle pairs back into quads (image meshes only)."""
    f = mesh.faces
    if f.shape[0] % 2:
        raise MeshError("mesh is not a grid triangulation")
    quads = []
    for q in range(0, f.shape[0], 2):
        a, b = f[q], f[q + 1]
        if not (a[0] == b[0] and a[2] == b[1]):
            raise MeshError("mesh is not a grid triangulation")
        quads.append((a[0], a[1], a[2], b[2]))
    return np.array(quads, dtype=np.int64)


def save_quad_obj(mesh: TriMesh, quads: np.ndarray, path) -> None:
    lines = []
    v = mesh.vertices
    if mesh.is_2d:
        v = np.column_stack([v, np.zeros(len(v))])
    for i in range(len(v)):
        lines.append("v " + " ".join(f"{c:.17g}" for c in v[i]))
    for a, b, c, d in quads:
        lines.append(f"f {a + 1} {b + 1} {c + 1} {d + 1}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# shared run helpers


def _exit_code(result) -> int:
    if not result.converged or result.transport.stalled:
        return EXIT_NOCONV
    if result.correction is not None and not result.correction.clean:
        return EXIT_CORRECTION
    return EXIT_OK


def _write_common(result, outdir: Path, stem: str, cfg: RunConfig) -> None:
    if cfg.csv:
        (outdir / f"{stem}_mu.csv").write_text(mu_csv(result.mu), encoding="utf-8")
        (outdir / f"{stem}_diag.csv").write_text(
            diagnostics_csv(result.diagnostics), encoding="utf-8"
        )
        (outdir / f"{stem}_convergence.csv").write_text(
            history_csv(result.transport.history), encoding="utf-8"
        )
    if cfg.svg:
        (outdir / f"{stem}_domain.svg").write_text(
            diagram_to_svg(result.transport.diagram), encoding="utf-8"
        )


def _run_param(path: str, cfg: RunConfig) -> int:
    mesh = load_mesh(path)
    result = transport_map(mesh, cfg.transport())
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = Path(path).stem
    save_mesh(result.mhat, outdir / f"{stem}_param.obj")
    _write_common(result, outdir, stem, cfg)
    logger.info(
        "%s: %d iterations, |grad|=%.2e, %d flips",
        stem, result.transport.state.iteration, result.transport.grad_norm,
        result.flips.size,
    )
    return _exit_code(result)


def _run_image(path: str, cfg: RunConfig) -> int:
    image = load_image(path)
    mesh = image_to_mesh(image, cfg.resolution)
    if cfg.measure not in ("image", "roi", "uniform"):
        raise ConfigError("image command needs the image, roi, or uniform measure")
    result = transport_map(mesh, cfg.transport())
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = Path(path).stem
    save_mesh(result.mhat, outdir / f"{stem}_mesh.obj")
    save_image(warp_image(image, result.parameter_mesh, result.mhat),
               outdir / f"{stem}_warped.png")
    if cfg.quad:
        save_quad_obj(result.mhat, grid_quads(result.mhat),
                      outdir / f"{stem}_quad.obj")
    _write_common(result, outdir, stem, cfg)
    return _exit_code(result)


def _run_temporal(path: str, cfg: RunConfig) -> int:
    p = Path(path)
    if p.suffix.lower() in IMAGE_SUFFIXES:
        mesh = image_to_mesh(load_image(path), cfg.resolution)
    else:
        mesh = load_mesh(path)
    seq = temporal_transport(mesh, cfg.transport())
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = p.stem
    if cfg.frames:
        frame_dir = outdir / f"{stem}_frames"
        frame_dir.mkdir(exist_ok=True)
        for k, frame in enumerate(seq.frames):
            save_mesh(frame, frame_dir / f"{stem}_{k:04d}.obj")
    if cfg.svg:
        (outdir / f"{stem}_trajectories.svg").write_text(
            trajectories_svg(seq), encoding="utf-8"
        )
    if cfg.csv:
        lines = ["frame,time,rho_max,flips"]
        for k in range(len(seq)):
            lines.append(
                f"{k},{seq.times[k]:.12g},{seq.rho_max[k]:.12g},{seq.flip_counts[k]}"
            )
        (outdir / f"{stem}_frames.csv").write_text("\n".join(lines) + "\n",
                                                   encoding="utf-8")
        psi_lines = ["frame,vertex,psi"]
        for k, psi in enumerate(seq.psi):
            for i, val in enumerate(psi):
                val_s = f"{val:.12g}" if np.isfinite(val) else ""
                psi_lines.append(f"{k},{i},{val_s}")
        (outdir / f"{stem}_psi.csv").write_text("\n".join(psi_lines) + "\n",
                                                encoding="utf-8")
    _write_common(seq.result, outdir, stem, cfg)
    return _exit_code(seq.result)


def _run_powerdiagram(args) -> int:
    sites = np.loadtxt(args.sites, ndmin=2)
    if sites.shape[1] != 2:
        raise MeshError("sites file must hold two columns")
    if args.heights:
        heights = np.loadtxt(args.heights, ndmin=1)
    else:
        heights = np.zeros(sites.shape[0])
    rect = Rect(*args.rect) if args.rect else Rect(-1.2, 1.2, -1.2, 1.2)
    pd = power_diagram(sites, heights, rect)
    Path(args.output).write_text(diagram_to_svg(pd), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--measure", choices=("area", "uniform", "roi", "image"))
    p.add_argument("--k", type=float, help="density scale inside ROIs / images")
    p.add_argument("--delta", type=float, help="intensity offset for image measures")
    p.add_argument("--eps-tol", dest="eps_tol", type=float,
                   help="gradient norm stopping tolerance")
    p.add_argument("--eps-distortion", dest="eps_distortion", type=float,
                   help="Beltrami magnitude triggering correction")
    p.add_argument("--gamma", type=int, help="correction patch ring radius")
    p.add_argument("--lambda0", type=float, help="initial step damping")
    p.add_argument("--omega-scale", dest="omega_scale", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--domain", choices=("disk", "square"))
    p.add_argument("--corners", type=int, nargs=4,
                   help="boundary vertices pinned to the square corners")
    p.add_argument("--clamp-weights", dest="clamp_weights", action="store_const",
                   const=True, help="floor cotangent weights at zero")
    p.add_argument("--roi", action="append",
                   help="circle:cx,cy,r,k or rect:xmin,ymin,xmax,ymax,k")
    p.add_argument("--resolution", type=int, help="image mesh vertices per side")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--svg", action="store_const", const=True)
    p.add_argument("--no-csv", dest="csv", action="store_const", const=False)
    p.add_argument("--frames", action="store_const", const=True)
    p.add_argument("--quad", action="store_const", const=True)
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers across input files")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otmesh",
        description="Topology-preserving optimal transport for triangle meshes",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("param", help="parameterize 3D surfaces")
    p.add_argument("inputs", nargs="+", help="OBJ/OFF mesh files")
    _add_common_options(p)

    p = sub.add_parser("image", help="image-driven mesh generation and editing")
    p.add_argument("inputs", nargs="+", help="grayscale image files")
    _add_common_options(p)

    p = sub.add_parser("temporal", help="transport trajectory with frames")
    p.add_argument("inputs", nargs=1, help="image or mesh file")
    _add_common_options(p)

    p = sub.add_parser("powerdiagram", help="debug SVG of a power diagram")
    p.add_argument("sites", help="text file, one 'x y' per line")
    p.add_argument("--heights", help="text file, one height per line")
    p.add_argument("--rect", type=float, nargs=4,
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--output", default="diagram.svg")
    return parser


_RUNNERS = {"param": _run_param, "image": _run_image, "temporal": _run_temporal}


def _run_one(command: str, path: str, cfg: RunConfig) -> int:
    return _RUNNERS[command](path, cfg)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "powerdiagram":
            return _run_powerdiagram(args)
        cfg = build_config(args)
        jobs = max(1, args.jobs)
        inputs = list(args.inputs)
        if jobs > 1 and len(inputs) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                codes = list(
                    pool.map(_run_one, [args.command] * len(inputs), inputs,
                             [cfg] * len(inputs))
                )
        else:
            codes = [_run_one(args.command, path, cfg) for path in inputs]
        return max(codes)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (MeshError, GeometryError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
