"""Command-line entry point: ``mwdepth <subcommand> ...``.

Every subcommand writes its outputs plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 input error, 3 degenerate geometry, 1 anything else.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .geometry import (CameraIntrinsics, DegenerateGeometryError, DepthMap, DominantDirections,
                       InputError, LineSegment, NormalMap, backproject, compute_normals,
                       estimate_dominant_directions)
from .manhattan import adaptive_threshold, align_normals, manhattan_mask
from .metrics import depth_metrics, normal_metrics
from .optimize import RefineConfig, RefineInputs, compute_signals, refine_depth, total_loss
from .photometric import Pose
from .plane import coplanar_depth_map, fit_segments
from .segmentation import SegmentationParams, SegmentationResult, segment_planes
from .synth import SceneSpec, generate_room, noisy_depth

log = logging.getLogger("mwdepth")


# ---------------------------------------------------------------- helpers

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_config(args) -> RefineConfig:
    cfg = RefineConfig()
    if getattr(args, "config", None):
        d = io.read_json(args.config)
        if not isinstance(d, dict):
            raise InputError("config JSON must be an object")
        cfg = RefineConfig.from_dict(d)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"--set expects key=value, got {item!r}")
        cfg = cfg.with_override(key.strip(), value.strip())
    return cfg


def _write_manifest(out: Path, args, cfg: RefineConfig | None, inputs: dict, extra: dict | None = None):
    cfg_dict = cfg.to_dict() if cfg is not None else None
    cfg_text = io.dumps_json(cfg_dict) if cfg_dict is not None else ""
    manifest = {
        "command": args.command,
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in sorted(inputs.items()) if v},
        "seed": getattr(args, "seed", None),
        "config": cfg_dict,
        "config_hash": hashlib.sha256(cfg_text.encode()).hexdigest() if cfg_dict is not None else None,
        "versions": {"mwdepth": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    if extra:
        manifest.update(extra)
    io.write_json(out / "manifest.json", manifest)


def _read_K(path) -> CameraIntrinsics:
    d = io.read_json(path)
    if not isinstance(d, dict):
        raise InputError("intrinsics JSON must be an object")
    try:
        return CameraIntrinsics.from_dict(d)
    except KeyError as e:
        raise InputError(f"intrinsics JSON missing {e}") from None


def _read_depth(path) -> DepthMap:
    a = io.read_pfm(path)
    if a.ndim != 2:
        raise InputError(f"{path} is not a single-channel depth map")
    return DepthMap(a.astype(np.float64))


def _read_dirs(path) -> DominantDirections:
    d = io.read_json(path)
    return DominantDirections(np.asarray(d, dtype=np.float64))


def _read_lines(path) -> list[LineSegment]:
    d = io.read_json(path)
    if not isinstance(d, list):
        raise InputError("lines JSON must be an array of {x0, y0, x1, y1}")
    try:
        return [LineSegment.from_dict(l) for l in d]
    except (KeyError, TypeError) as e:
        raise InputError(f"malformed line segment: {e}") from None


def _segment_summary(seg: SegmentationResult, normals: NormalMap, planes=None) -> list[dict]:
    flat_n = normals.normals.reshape(-1, 3)
    thetas = {p.segment_id: p.theta for p in planes or []}
    out = []
    for s in seg.segments:
        mn = flat_n[s.pixels].sum(axis=0)
        nn = np.linalg.norm(mn)
        out.append({"id": s.id, "area": s.area,
                    "mean_normal": (mn / nn if nn > 0 else mn).tolist(),
                    "theta": thetas[s.id].tolist() if s.id in thetas else None})
    return out


class Scene:
    """A directory written by ``mwdepth synth`` (view 0 is the target)."""

    def __init__(self, root):
        self.root = Path(root)
        if not (self.root / "intrinsics.json").exists():
            raise InputError(f"{root} is not a scene directory (no intrinsics.json)")
        self.K = _read_K(self.root / "intrinsics.json")
        self.image = io.read_rgb_png(self.root / "image.png")
        self.depth = _read_depth(self.root / "depth.pfm")
        n = io.read_pfm(self.root / "normals.pfm").astype(np.float64)
        self.normals = NormalMap(n, np.linalg.norm(n, axis=-1) > 0.5)
        rel = io.read_json(self.root / "relative_poses.json")
        self.poses = [Pose.from_dict(p) for p in rel]
        self.sources = [io.read_rgb_png(self.root / f"image_{i}.png") for i in range(1, len(self.poses) + 1)]
        self.lines_path = self.root / "lines.json"

    def files(self) -> dict:
        d = {"intrinsics": self.root / "intrinsics.json", "image": self.root / "image.png",
             "depth": self.root / "depth.pfm", "relative_poses": self.root / "relative_poses.json"}
        for i in range(1, len(self.poses) + 1):
            d[f"image_{i}"] = self.root / f"image_{i}.png"
        return d

    def dirs(self, dirs_path=None, angle_tol: float = 2.0) -> DominantDirections:
        if dirs_path:
            return _read_dirs(dirs_path)
        d, _ = estimate_dominant_directions(_read_lines(self.lines_path), self.K, angle_tol)
        return d

    def inputs(self, dirs: DominantDirections) -> RefineInputs:
        return RefineInputs(self.K, self.image, self.sources, self.poses, dirs, self.depth, self.normals)


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    out = io.ensure_dir(args.out)
    spec_d = io.read_json(args.spec)
    if not isinstance(spec_d, dict):
        raise InputError("scene spec JSON must be an object")
    spec = SceneSpec.from_dict(spec_d)
    if args.seed is not None:
        spec.seed = args.seed
    scene = generate_room(spec)
    io.write_json(out / "spec.json", spec.to_dict())
    io.write_json(out / "intrinsics.json", spec.intrinsics.to_dict())
    io.write_json(out / "poses.json", [p.to_dict() for p in spec.poses])
    io.write_json(out / "relative_poses.json",
                  [scene.relative_pose(0, i).to_dict() for i in range(1, len(spec.poses))])
    io.write_json(out / "directions_gt.json", scene.directions(0).dirs)
    for i, v in enumerate(scene.views):
        sfx = "" if i == 0 else f"_{i}"
        io.write_rgb_png(out / f"image{sfx}.png", v.image)
        io.write_pfm(out / f"depth{sfx}.pfm", v.depth.values)
        io.write_pfm(out / f"normals{sfx}.pfm", v.normals.normals)
        io.write_label_png(out / f"plane_ids{sfx}.png", v.plane_ids)
        io.write_json(out / f"lines{sfx}.json", [l.to_dict() for l in v.lines])
    _write_manifest(out, args, None, {"spec": args.spec})


def cmd_dirs(args):
    out = io.ensure_dir(args.out)
    K = _read_K(args.k)
    dirs, inliers = estimate_dominant_directions(_read_lines(args.lines), K, args.angle_tol)
    io.write_json(out / "directions.json", dirs.dirs)
    _write_manifest(out, args, None, {"lines": args.lines, "k": args.k},
                    {"inliers": inliers, "angle_tol": args.angle_tol})


def cmd_normals(args):
    out = io.ensure_dir(args.out)
    K = _read_K(args.k)
    normals = compute_normals(backproject(_read_depth(args.depth), K))
    io.write_pfm(out / "normals.pfm", normals.normals)
    io.write_mask_png(out / "normals_valid.png", normals.valid)
    _write_manifest(out, args, None, {"depth": args.depth, "k": args.k})


def cmd_manhattan(args):
    out = io.ensure_dir(args.out)
    cfg = _load_config(args)
    K = _read_K(args.k)
    align = align_normals(compute_normals(backproject(_read_depth(args.depth), K)), _read_dirs(args.dirs))
    gamma = adaptive_threshold(args.epoch, cfg.schedule)
    io.write_pfm(out / "aligned.pfm", align.aligned)
    io.write_pfm(out / "smax.pfm", align.smax)
    io.write_mask_png(out / "mask.png", manhattan_mask(align, gamma))
    _write_manifest(out, args, cfg, {"depth": args.depth, "k": args.k, "dirs": args.dirs},
                    {"gamma": gamma, "epoch": args.epoch})


def _segment_inputs(args):
    K = _read_K(args.k)
    image = io.read_rgb_png(args.image)
    points = backproject(_read_depth(args.depth), K)
    normals = compute_normals(points)
    align = align_normals(normals, _read_dirs(args.dirs))
    return K, image, points, normals, align


def cmd_segment(args):
    out = io.ensure_dir(args.out)
    cfg = _load_config(args)
    K, image, points, normals, align = _segment_inputs(args)
    seg = segment_planes(image, points, align, cfg.segmentation)
    base_params = SegmentationParams(**{**cfg.segmentation.__dict__, "fusion": "color"})
    base = segment_planes(image, points, align, base_params)
    io.write_label_png(out / "labels.png", seg.labels)
    io.write_json(out / "segments.json", _segment_summary(seg, normals))
    io.write_label_png(out / "labels_color_only.png", base.labels)
    io.write_json(out / "segments_color_only.json", _segment_summary(base, normals))
    _write_manifest(out, args, cfg, {"image": args.image, "depth": args.depth, "k": args.k, "dirs": args.dirs},
                    {"segments": len(seg.segments), "segments_color_only": len(base.segments)})


def cmd_planes(args):
    out = io.ensure_dir(args.out)
    cfg = _load_config(args)
    K, image, points, normals, align = _segment_inputs(args)
    seg = segment_planes(image, points, align, cfg.segmentation)
    planes = fit_segments(points, seg)
    pd = coplanar_depth_map(planes, seg, K, cfg.d_min, cfg.d_max)
    io.write_json(out / "planes.json", _segment_summary(seg, normals, planes))
    io.write_pfm(out / "coplanar_depth.pfm", pd.values)
    io.write_mask_png(out / "planar_mask.png", pd.mask)
    _write_manifest(out, args, cfg, {"image": args.image, "depth": args.depth, "k": args.k, "dirs": args.dirs},
                    {"planes": len(planes)})


def cmd_loss(args):
    out = io.ensure_dir(args.out)
    cfg = _load_config(args)
    scene = Scene(args.scene)
    dirs = scene.dirs(args.dirs)
    depth = _read_depth(args.depth) if args.depth else scene.depth
    inputs = scene.inputs(dirs)
    signals = compute_signals(depth, inputs, cfg, args.epoch) if cfg.structural else None
    rep = total_loss(depth, inputs, signals, cfg, want_grad=True)
    report = {**rep.terms(), "lambda_smooth": cfg.lambda_smooth, "lambda_norm": cfg.lambda_norm,
              "lambda_plane": cfg.lambda_plane, "gradient_l2": float(np.linalg.norm(rep.gradient))}
    io.write_json(out / "loss.json", report)
    io.write_pfm(out / "gradient.pfm", rep.gradient)
    files = {**scene.files(), "depth_in": args.depth, "dirs": args.dirs}
    _write_manifest(out, args, cfg, files, {"epoch": args.epoch})


def cmd_refine(args):
    out = io.ensure_dir(args.out)
    cfg = _load_config(args)
    scene = Scene(args.scene)
    dirs = scene.dirs(args.dirs)
    seed = 0 if args.seed is None else args.seed
    init = _read_depth(args.init) if args.init else noisy_depth(scene.depth, args.noise, seed)
    io.write_pfm(out / "init_depth.pfm", init.values)

    snap_dir = io.ensure_dir(out / "snapshots") if args.snapshots else None

    def on_epoch(epoch, D):
        if snap_dir is not None:
            io.write_pfm(snap_dir / f"depth_{epoch:04d}.pfm", D)

    result = refine_depth(init, scene.inputs(dirs), cfg, on_epoch)
    io.write_pfm(out / "depth.pfm", result.depth.values)
    io.write_csv(out / "history.csv", result.history)
    m0 = depth_metrics(init, scene.depth)
    m1 = depth_metrics(result.depth, scene.depth)
    io.write_json(out / "metrics.json", {"initial": m0.to_dict(), "final": m1.to_dict()})
    files = {**scene.files(), "init": args.init, "config": args.config, "dirs": args.dirs}
    _write_manifest(out, args, cfg, files, {"noise": args.noise if not args.init else None})


def cmd_eval(args):
    out = io.ensure_dir(args.out)
    pred, gt = _read_depth(args.pred), _read_depth(args.gt)
    result = {"depth": depth_metrics(pred, gt, args.cap, args.median_scale).to_dict()}
    if args.pred_normals and args.gt_normals:
        pn = io.read_pfm(args.pred_normals).astype(np.float64)
        gn = io.read_pfm(args.gt_normals).astype(np.float64)
        pn_map = NormalMap(pn, np.linalg.norm(pn, axis=-1) > 0.5)
        gn_map = NormalMap(gn, np.linalg.norm(gn, axis=-1) > 0.5)
        result["normals"] = normal_metrics(pn_map, gn_map).to_dict()
    io.write_json(out / "metrics.json", result)
    _write_manifest(out, args, None, {"pred": args.pred, "gt": args.gt, "pred_normals": args.pred_normals,
                                      "gt_normals": args.gt_normals},
                    {"cap": args.cap, "median_scale": args.median_scale})


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mwdepth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, config=False):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=func)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", help="RefineConfig JSON")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="config override, dotted keys allowed (repeatable)")
        return sp

    sp = add("synth", cmd_synth, "render a synthetic room")
    sp.add_argument("--spec", required=True)

    sp = add("dirs", cmd_dirs, "dominant directions from line segments")
    sp.add_argument("--lines", required=True)
    sp.add_argument("--k", required=True)
    sp.add_argument("--angle-tol", type=float, default=2.0)

    sp = add("normals", cmd_normals, "surface normals from depth")
    sp.add_argument("--depth", required=True)
    sp.add_argument("--k", required=True)

    sp = add("manhattan", cmd_manhattan, "aligned normals and Manhattan mask", config=True)
    for a in ("--depth", "--k", "--dirs"):
        sp.add_argument(a, required=True)
    sp.add_argument("--epoch", type=int, default=0)

    for name, func, text in (("segment", cmd_segment, "planar regions (fused and color-only)"),
                             ("planes", cmd_planes, "plane fits and co-planar depth")):
        sp = add(name, func, text, config=True)
        for a in ("--image", "--depth", "--k", "--dirs"):
            sp.add_argument(a, required=True)

    sp = add("loss", cmd_loss, "evaluate the total loss on a scene", config=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--depth", help="depth to evaluate (default: scene ground truth)")
    sp.add_argument("--dirs", help="directions JSON (default: estimated from scene lines)")
    sp.add_argument("--epoch", type=int, default=0)

    sp = add("refine", cmd_refine, "refine a depth field on a scene", config=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--init", help="initial depth PFM (default: noisy ground truth)")
    sp.add_argument("--noise", type=float, default=0.2, help="multiplicative noise level for the default init")
    sp.add_argument("--dirs", help="directions JSON (default: estimated from scene lines)")
    sp.add_argument("--snapshots", action="store_true", help="write per-epoch depth PFMs")

    sp = add("eval", cmd_eval, "depth (and normal) metrics")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--cap", type=float, default=10.0)
    sp.add_argument("--median-scale", action="store_true")
    sp.add_argument("--pred-normals")
    sp.add_argument("--gt-normals")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DegenerateGeometryError as e:
        print(f"mwdepth {args.command}: degenerate geometry: {e}", file=sys.stderr)
        return 3
    except (InputError, io.FormatError, FileNotFoundError, IsADirectoryError, KeyError, TypeError) as e:
        print(f"mwdepth {args.command}: input error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - last-resort CLI boundary
        print(f"mwdepth {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
