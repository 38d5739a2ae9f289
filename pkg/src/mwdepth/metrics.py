"""Depth and surface-normal error metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import DepthMap, InputError, NormalMap

NORMAL_THRESHOLDS = (11.25, 22.5, 30.0)


@dataclass
class DepthMetrics:
    rms: float
    absrel: float
    log10: float
    delta1: float
    delta2: float
    delta3: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NormalMetrics:
    mean: float
    within_11_25: float
    within_22_5: float
    within_30: float

    def to_dict(self) -> dict:
        return asdict(self)


def depth_metrics(pred: DepthMap, gt: DepthMap, cap: float = 10.0,
                  median_scale: bool = False) -> DepthMetrics:
    if pred.shape != gt.shape:
        raise InputError("prediction and ground truth differ in shape")
    mask = pred.valid & gt.valid
    if not mask.any():
        raise InputError("no pixel is valid in both depth maps")
    p = pred.values[mask]
    g = gt.values[mask]
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    p = np.minimum(p, cap)
    g = np.minimum(g, cap)
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        rms=float(np.sqrt(np.mean((p - g) ** 2))),
        absrel=float(np.mean(np.abs(p - g) / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
    )


def angular_error(pred: NormalMap, gt: NormalMap) -> np.ndarray:
    """Per-pixel angle in degrees over the shared valid mask (flattened)."""
    if pred.shape != gt.shape:
        raise InputError("normal maps differ in shape")
    mask = pred.valid & gt.valid
    if not mask.any():
        raise InputError("no pixel is valid in both normal maps")
    cos = np.clip(np.sum(pred.normals[mask] * gt.normals[mask], axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def normal_metrics(pred: NormalMap, gt: NormalMap) -> NormalMetrics:
    ang = angular_error(pred, gt)
    return NormalMetrics(float(ang.mean()), *(float(np.mean(ang < t)) for t in NORMAL_THRESHOLDS))
