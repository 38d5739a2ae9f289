"""Depth-field refinement under the combined structural/photometric loss.

A per-pixel log-depth field stands in for the depth network. Supervisory
signals (aligned normals, Manhattan mask, planar segments, co-planar depth)
are recomputed from the current depth every ``refresh_period`` epochs and
held fixed between refreshes.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import (CameraIntrinsics, DepthMap, DominantDirections, InputError, NormalMap,
                       backproject, compute_normals)
from .manhattan import (AlignmentResult, ThresholdSchedule, adaptive_threshold, align_normals,
                        manhattan_mask, manhattan_normal_loss)
from .metrics import angular_error, depth_metrics
from .photometric import Pose, PatchSet, dense_patches, photometric_loss, smoothness_loss
from .plane import CoplanarDepth, PlaneParams, coplanar_depth_map, coplanar_loss, fit_segments
from .segmentation import SegmentationParams, SegmentationResult, segment_planes

log = logging.getLogger(__name__)


class RefineDivergedError(RuntimeError):
    pass


@dataclass
class RefineConfig:
    epochs: int = 30
    steps_per_epoch: int = 20
    lr: float = 0.5  # step in log-depth per unit gradient of a per-pixel-mean loss
    lambda_smooth: float = 0.001
    lambda_norm: float = 0.05
    lambda_plane: float = 0.1
    omega: float = 0.85
    schedule: ThresholdSchedule = field(default_factory=ThresholdSchedule)
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    warmup_epochs: int = 2
    refresh_period: int = 1
    patch_size: int = 3
    patch_dilation: int = 1
    patch_stride: int = 4
    d_min: float = 0.1
    d_max: float = 10.0
    max_halvings: int = 20
    divergence_factor: float = 10.0

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = ThresholdSchedule(**self.schedule)
        if isinstance(self.segmentation, dict):
            self.segmentation = SegmentationParams(**self.segmentation)
        if self.lr <= 0 or self.refresh_period < 1 or self.epochs < 0 or self.steps_per_epoch < 0:
            raise InputError("refine config needs lr > 0, refresh_period >= 1 and non-negative counts")
        for name in ("lambda_smooth", "lambda_norm", "lambda_plane"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be non-negative")
        if not 0 <= self.omega <= 1:
            raise InputError("omega must lie in [0, 1]")

    @property
    def structural(self) -> bool:
        return self.lambda_norm > 0 or self.lambda_plane > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RefineConfig":
        cfg = cls()
        for key, value in d.items():
            cfg = cfg.with_override(key, value)
        return cfg

    def with_override(self, key: str, value) -> "RefineConfig":
        """Copy with a (possibly dotted) key replaced; unknown keys raise InputError."""
        d = self.to_dict()
        if isinstance(value, dict):
            for k, v in value.items():
                d = _set_dotted(d, f"{key}.{k}", v, type(self))
        else:
            d = _set_dotted(d, key, value, type(self))
        return RefineConfig(**d)


def _set_dotted(d: dict, key: str, value, cls) -> dict:
    parts = key.split(".")
    node, node_cls = d, cls
    for i, part in enumerate(parts):
        names = {f.name: f for f in fields(node_cls)}
        if part not in names or part not in node:
            raise InputError(f"unknown config key {key!r}")
        if i == len(parts) - 1:
            if isinstance(node[part], dict):
                raise InputError(f"config key {key!r} is a section, not a value")
            node[part] = _coerce(value, node[part], key)
        else:
            sub_default = getattr(node_cls(), part)
            if not is_dataclass(sub_default):
                raise InputError(f"config key {key!r} is not a section")
            node = node[part]
            node_cls = type(sub_default)
    return d


def _coerce(value, current, key):
    if isinstance(value, str) and not isinstance(current, str):
        import json
        try:
            value = json.loads(value)
        except ValueError:
            raise InputError(f"cannot parse value {value!r} for {key!r}") from None
    if isinstance(current, bool) or current is None:
        return value
    if isinstance(current, int) and not isinstance(value, bool) and float(value).is_integer():
        return int(value)
    if isinstance(current, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if type(value) is not type(current):
        raise InputError(f"config key {key!r} expects {type(current).__name__}")
    return value


@dataclass
class RefineInputs:
    K: CameraIntrinsics
    image: np.ndarray  # target view, H x W x 3
    sources: Sequence[np.ndarray]
    poses: Sequence[Pose]  # target -> source
    dirs: DominantDirections
    gt_depth: Optional[DepthMap] = None
    gt_normals: Optional[NormalMap] = None


@dataclass
class Signals:
    """Detached supervisory signals for one refresh period."""

    gamma: float
    align: AlignmentResult
    manhattan: np.ndarray
    segmentation: SegmentationResult
    planes: list[PlaneParams]
    plane_depth: CoplanarDepth

    @property
    def planar(self) -> np.ndarray:
        return self.segmentation.planar_mask


@dataclass
class LossReport:
    photo: float
    smooth: float
    norm: float
    plane: float
    total: float
    gradient: Optional[np.ndarray] = None  # d total / d depth

    def terms(self) -> dict:
        return {"photo": self.photo, "smooth": self.smooth, "norm": self.norm,
                "plane": self.plane, "total": self.total}


def compute_signals(depth: DepthMap, inputs: RefineInputs, config: RefineConfig, epoch: int) -> Signals:
    points = backproject(depth, inputs.K)
    normals = compute_normals(points)
    align = align_normals(normals, inputs.dirs)
    gamma = adaptive_threshold(epoch, config.schedule)
    mM = manhattan_mask(align, gamma)
    seg = segment_planes(inputs.image, points, align, config.segmentation)
    planes = fit_segments(points, seg)
    pd = coplanar_depth_map(planes, seg, inputs.K, config.d_min, config.d_max)
    return Signals(gamma=gamma, align=align, manhattan=mM, segmentation=seg, planes=planes, plane_depth=pd)


def total_loss(depth: DepthMap, inputs: RefineInputs, signals: Optional[Signals], config: RefineConfig,
               want_grad: bool = True, patches: Optional[PatchSet] = None) -> LossReport:
    """photo + l1 smooth + l2 norm + l3 plane; structural terms need ``signals``."""
    if patches is None:
        patches = dense_patches(depth.shape, config.patch_size, config.patch_dilation, config.patch_stride)
    photo = photometric_loss(inputs.image, inputs.sources, depth, inputs.poses, inputs.K, patches,
                             config.omega, want_grad)
    smooth = smoothness_loss(depth, inputs.image, want_grad)
    norm_v = plane_v = 0.0
    grad = None
    if want_grad:
        grad = photo.grad + config.lambda_smooth * smooth.grad
    if signals is not None:
        if config.lambda_norm > 0:
            normals = compute_normals(backproject(depth, inputs.K))
            t = manhattan_normal_loss(normals, signals.align, signals.manhattan, signals.planar, want_grad)
            norm_v = t.value
            if want_grad:
                grad = grad + config.lambda_norm * t.grad
        if config.lambda_plane > 0:
            t = coplanar_loss(depth, signals.plane_depth, signals.planar, want_grad)
            plane_v = t.value
            if want_grad:
                grad = grad + config.lambda_plane * t.grad
    total = (photo.value + config.lambda_smooth * smooth.value + config.lambda_norm * norm_v
             + config.lambda_plane * plane_v)
    return LossReport(photo.value, smooth.value, norm_v, plane_v, total, grad)


KINK_TOL = 1e-9  # relative co-planar residual treated as lying on the plane


def descent_direction(depth: DepthMap, rep: LossReport, signals: Optional[Signals],
                      config: RefineConfig) -> np.ndarray:
    """Minimum-norm subgradient of the total loss w.r.t. depth.

    Equal to ``rep.gradient`` except at pixels lying on their co-planar depth,
    where |D - D_plane| has a kink: there the co-planar term can absorb up to
    lambda_plane / N of opposing gradient, so the rest is soft-thresholded.
    """
    g = rep.gradient
    if signals is None or config.lambda_plane == 0:
        return g
    pd = signals.plane_depth
    mask = signals.planar & pd.mask & depth.valid
    n = int(mask.sum())
    if n == 0:
        return g
    kink = mask & (np.abs(depth.values - pd.values) <= KINK_TOL * pd.values)
    if not kink.any():
        return g
    r = depth.values - pd.values
    others = g - config.lambda_plane * np.where(mask, np.sign(r) / n, 0.0)
    cap = config.lambda_plane / n
    shrunk = np.sign(others) * np.maximum(np.abs(others) - cap, 0.0)
    return np.where(kink, shrunk, g)


@dataclass
class RefineResult:
    depth: DepthMap
    history: list[dict]
    signals: Optional[Signals] = None


def _epoch_record(epoch: int, D: np.ndarray, rep: LossReport, signals: Optional[Signals],
                  inputs: RefineInputs, valid: np.ndarray) -> dict:
    rec = {"epoch": epoch, **rep.terms(),
           "gamma": signals.gamma if signals else float("nan"),
           "planar_frac": float(signals.planar.mean()) if signals else 0.0,
           "segments": len(signals.segmentation.segments) if signals else 0}
    depth = DepthMap(D, valid)
    if inputs.gt_depth is not None:
        m = depth_metrics(depth, inputs.gt_depth)
        rec["absrel"], rec["rms"] = m.absrel, m.rms
    else:
        rec["absrel"] = rec["rms"] = float("nan")
    if inputs.gt_normals is not None:
        n = compute_normals(backproject(depth, inputs.K))
        rec["normal_mean_deg"] = float(angular_error(n, inputs.gt_normals).mean())
    else:
        rec["normal_mean_deg"] = float("nan")
    return rec


def refine_depth(init: DepthMap, inputs: RefineInputs, config: RefineConfig = RefineConfig(),
                 on_epoch: Optional[Callable[[int, np.ndarray], None]] = None) -> RefineResult:
    """Gradient descent on log-depth with a halving line search.

    Epochs before ``warmup_epochs`` use photometric + smoothness only. The
    returned history has one record per epoch, taken at the end of it.
    """
    if init.shape != inputs.K.shape:
        raise InputError("initial depth does not match the intrinsics")
    if not init.valid.all():
        raise InputError("refinement needs a fully valid initial depth")
    D = init.values.copy()
    valid = init.valid.copy()
    patches = dense_patches(init.shape, config.patch_size, config.patch_dilation, config.patch_stride)
    n_pix = D.size
    history: list[dict] = []
    signals: Optional[Signals] = None
    reference: Optional[float] = None
    phase = None
    step_scale = 1.0

    for epoch in range(config.epochs):
        structural = config.structural and epoch >= config.warmup_epochs
        if structural and (signals is None or (epoch - config.warmup_epochs) % config.refresh_period == 0):
            signals = compute_signals(DepthMap(D, valid), inputs, config, epoch)
        active = signals if structural else None
        if phase != structural:
            phase, reference = structural, None

        rep = total_loss(DepthMap(D, valid), inputs, active, config, True, patches)
        if reference is None:
            reference = rep.total
        elif rep.total > config.divergence_factor * max(reference, 1e-300):
            raise RefineDivergedError(
                f"epoch {epoch}: total loss {rep.total:.6g} exceeds {config.divergence_factor}x "
                f"its reference {reference:.6g}")
        for _ in range(config.steps_per_epoch):
            g_s = descent_direction(DepthMap(D, valid), rep, active, config) * D
            if not np.any(g_s):
                break
            accepted = False
            scale = min(2.0 * step_scale, 1.0)
            for _ in range(config.max_halvings + 1):
                D_new = D * np.exp(-config.lr * n_pix * scale * g_s)
                new = total_loss(DepthMap(D_new, valid), inputs, active, config, True, patches)
                if np.isfinite(new.total) and new.total < rep.total:
                    accepted = True
                    break
                scale *= 0.5
            if not accepted:
                break
            D, rep, step_scale = D_new, new, scale

        history.append(_epoch_record(epoch, D, rep, active, inputs, valid))
        log.info("epoch %d total %.6g absrel %.5f", epoch, rep.total, history[-1]["absrel"])
        if on_epoch is not None:
            on_epoch(epoch, D)

    if config.epochs == 0:
        return RefineResult(DepthMap(init.values.copy(), init.valid.copy()), history, None)
    return RefineResult(DepthMap(D, valid), history, signals)


def finite_diff_grad(loss: Callable[[np.ndarray], float], depth: np.ndarray, eps: float = 1e-4,
                     pixels: Optional[Sequence[tuple[int, int]]] = None) -> np.ndarray:
    """Central differences (L(D + eps e_p) - L(D - eps e_p)) / 2 eps at the queried pixels.

    Unqueried pixels are NaN. ``loss`` must close over frozen signals.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    D = np.asarray(depth, dtype=np.float64)
    out = np.full(D.shape, np.nan)
    if pixels is None:
        pixels = list(np.ndindex(D.shape))
    for p in pixels:
        Dp = D.copy()
        Dm = D.copy()
        Dp[p] += eps
        Dm[p] -= eps
        out[p] = (loss(Dp) - loss(Dm)) / (2 * eps)
    return out
