"""Manhattan alignment of normals, adaptive thresholding and the normal loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DominantDirections, InputError, NormalMap
from .terms import LossTerm


@dataclass
class AlignmentResult:
    aligned: np.ndarray  # H x W x 3
    smax: np.ndarray  # H x W
    valid: np.ndarray  # H x W bool
    index: np.ndarray  # H x W winning candidate index, -1 where invalid


@dataclass
class ThresholdSchedule:
    alpha: float = 1.633e-3
    beta: float = 0.9
    gamma_max: float = 0.9999

    def __post_init__(self):
        if not (0 < self.beta <= self.gamma_max < 1):
            raise InputError("threshold schedule needs 0 < beta <= gamma_max < 1")
        if self.alpha < 0:
            raise InputError("threshold slope must be non-negative")


def align_normals(normals: NormalMap, dirs: DominantDirections) -> AlignmentResult:
    """Snap each valid normal to the most similar signed dominant direction."""
    cand = dirs.candidates()
    n = normals.normals
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    unit = n / np.where(norm > 0, norm, 1.0)
    sim = unit @ cand.T  # H x W x 6
    idx = np.argmax(sim, axis=-1)  # first maximum wins: d1, -d1, d2, ...
    smax = np.take_along_axis(sim, idx[..., None], axis=-1)[..., 0]
    valid = normals.valid & (norm[..., 0] > 0)
    aligned = np.where(valid[..., None], cand[idx], 0.0)
    return AlignmentResult(aligned=aligned, smax=np.where(valid, smax, 0.0), valid=valid,
                           index=np.where(valid, idx, -1))


def adaptive_threshold(epoch: int, sched: ThresholdSchedule = ThresholdSchedule()) -> float:
    if epoch < 0:
        raise InputError("epoch must be non-negative")
    return min(sched.alpha * epoch + sched.beta, sched.gamma_max)


def manhattan_mask(align: AlignmentResult, gamma: float) -> np.ndarray:
    if not 0 < gamma < 1:
        raise InputError(f"threshold must lie in (0, 1), got {gamma}")
    return align.valid & (align.smax >= gamma)


def manhattan_normal_loss(normals: NormalMap, align: AlignmentResult, mM: np.ndarray,
                          mP: np.ndarray, want_grad: bool = True) -> LossTerm:
    """Mean of 1 - n . n_align over pixels in both the Manhattan and planar masks.

    The aligned normals are a fixed target; the gradient reaches depth
    through ``normals.backward``.
    """
    shape = normals.shape
    if align.aligned.shape[:2] != shape or mM.shape != shape or mP.shape != shape:
        raise InputError("normal loss inputs do not share dimensions")
    m = mM & mP & normals.valid
    N = int(m.sum())
    if N == 0:
        return LossTerm(0.0, np.zeros(shape) if want_grad else None)
    cos = np.sum(normals.normals * align.aligned, axis=-1)
    value = float(np.sum(1.0 - cos[m]) / N)
    grad = None
    if want_grad:
        g_n = np.where(m[..., None], -align.aligned / N, 0.0)
        grad = normals.backward(g_n)
    return LossTerm(value, grad)
