"""Least-squares plane fits, co-planar depth and the co-planar loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import CameraIntrinsics, DegenerateGeometryError, DepthMap, InputError, PointMap
from .segmentation import SegmentationResult
from .terms import LossTerm

COND_LIMIT = 1e10
D_MIN = 0.1
D_MAX = 10.0


class DegenerateFitError(DegenerateGeometryError):
    pass


@dataclass
class PlaneParams:
    theta: np.ndarray  # -n/d, satisfies X . theta = 1 on the plane
    segment_id: int = 0
    inlier_count: int = 0

    @property
    def normal(self) -> np.ndarray:
        """Camera-facing unit normal (n . X < 0 for points on the plane)."""
        return -self.theta / np.linalg.norm(self.theta)

    @property
    def distance(self) -> float:
        return 1.0 / float(np.linalg.norm(self.theta))


@dataclass
class CoplanarDepth:
    values: np.ndarray  # H x W, meaningful where mask
    mask: np.ndarray
    d_min: float = D_MIN
    d_max: float = D_MAX


def fit_plane(points, segment_id: int = 0) -> PlaneParams:
    """Solve X^T theta = 1 in the least-squares sense via the 3x3 normal equations."""
    X = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(X) < 3:
        raise DegenerateFitError(f"need at least 3 points, got {len(X)}")
    A = X.T @ X
    ev = np.linalg.eigvalsh(A)
    if ev[0] <= 0 or ev[-1] / ev[0] > COND_LIMIT:
        raise DegenerateFitError("points are collinear or their plane passes through the origin")
    theta = np.linalg.solve(A, X.sum(axis=0))
    if not np.all(np.isfinite(theta)) or not np.any(theta):
        raise DegenerateFitError("plane fit produced no finite parameters")
    return PlaneParams(theta=theta, segment_id=segment_id, inlier_count=len(X))


def fit_segments(points: PointMap, seg: SegmentationResult) -> list[PlaneParams]:
    """Fit every segment; degenerate segments are dropped."""
    flat = points.points.reshape(-1, 3)
    out = []
    for s in seg.segments:
        try:
            out.append(fit_plane(flat[s.pixels], segment_id=s.id))
        except DegenerateFitError:
            continue
    return out


def coplanar_depth(theta, K: CameraIntrinsics, pixels=None, d_min: float = D_MIN,
                   d_max: float = D_MAX) -> np.ndarray:
    """Depth 1/(theta . K^-1 (u, v, 1)) clamped to [d_min, d_max].

    ``pixels`` is an (N, 2) array of (u, v); when omitted, the full image grid
    is used and an H x W array is returned. Non-positive inverse depth maps
    to ``d_max``.
    """
    theta = np.asarray(getattr(theta, "theta", theta), dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise InputError("plane parameters must be finite")
    if pixels is None:
        rays = K.rays()
    else:
        uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        rays = np.stack([(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy,
                         np.ones(len(uv))], axis=-1)
    rho = rays @ theta
    with np.errstate(divide="ignore"):
        depth = np.where(rho > 0, 1.0 / np.where(rho > 0, rho, 1.0), d_max)
    return np.clip(depth, d_min, d_max)


def coplanar_depth_map(planes: list[PlaneParams], seg: SegmentationResult, K: CameraIntrinsics,
                       d_min: float = D_MIN, d_max: float = D_MAX) -> CoplanarDepth:
    """Co-planar depth over every successfully fitted segment."""
    H, W = seg.labels.shape
    rays = K.rays().reshape(-1, 3)
    values = np.zeros(H * W)
    mask = np.zeros(H * W, dtype=bool)
    by_id = {s.id: s for s in seg.segments}
    for pl in planes:
        px = by_id[pl.segment_id].pixels
        rho = rays[px] @ pl.theta
        d = np.where(rho > 0, 1.0 / np.where(rho > 0, rho, 1.0), d_max)
        values[px] = np.clip(d, d_min, d_max)
        mask[px] = True
    return CoplanarDepth(values.reshape(H, W), mask.reshape(H, W), d_min, d_max)


def coplanar_loss(depth: DepthMap, plane_depth: CoplanarDepth, mP: Optional[np.ndarray] = None,
                  want_grad: bool = True) -> LossTerm:
    """Mean |D - D_plane| over the planar mask; the plane depth is a fixed target."""
    mask = plane_depth.mask if mP is None else (mP & plane_depth.mask)
    if mask.shape != depth.shape:
        raise InputError("planar mask does not match depth dimensions")
    mask = mask & depth.valid
    N = int(mask.sum())
    if N == 0:
        return LossTerm(0.0, np.zeros(depth.shape) if want_grad else None)
    r = depth.values - plane_depth.values
    value = float(np.abs(r[mask]).sum() / N)
    grad = np.where(mask, np.sign(r) / N, 0.0) if want_grad else None
    return LossTerm(value, grad)
