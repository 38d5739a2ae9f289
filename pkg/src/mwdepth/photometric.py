"""Patch photometric loss through differentiable inverse warping, and smoothness."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import CameraIntrinsics, DepthMap, InputError
from .terms import LossTerm

C1 = 0.01 ** 2
C2 = 0.03 ** 2
Z_MIN = 1e-6


@dataclass(frozen=True)
class Pose:
    """Rigid transform taking target-camera coordinates to the source camera."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise InputError("pose rotation must be orthonormal with det +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        """self after other."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return X @ self.R.T + self.t

    def to_dict(self) -> dict:
        return {"R": self.R.reshape(-1).tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        if set(d) != {"R", "t"} or len(d["R"]) != 9 or len(d["t"]) != 3:
            raise InputError("pose JSON needs R (9 floats, row-major) and t (3 floats)")
        return cls(np.array(d["R"], dtype=np.float64).reshape(3, 3), np.array(d["t"], dtype=np.float64))


@dataclass
class PatchSet:
    anchors: np.ndarray  # (N, 2) integer (v, u)
    offsets: np.ndarray  # (M, 2) integer (dv, du)

    @property
    def pixels(self) -> np.ndarray:
        """(N, M, 2) pixel (v, u) of every patch sample."""
        return self.anchors[:, None, :] + self.offsets[None, :, :]


def dense_patches(shape: tuple[int, int], size: int = 3, dilation: int = 1, stride: int = 4) -> PatchSet:
    if size < 1 or size % 2 == 0:
        raise InputError("patch size must be odd and positive")
    H, W = shape
    r = dilation * (size // 2)
    vs = np.arange(r, H - r, stride)
    us = np.arange(r, W - r, stride)
    av, au = np.meshgrid(vs, us, indexing="ij")
    anchors = np.stack([av.ravel(), au.ravel()], axis=-1)
    k = dilation * (np.arange(size) - size // 2)
    ov, ou = np.meshgrid(k, k, indexing="ij")
    return PatchSet(anchors=anchors, offsets=np.stack([ov.ravel(), ou.ravel()], axis=-1))


def warp_coordinates(depth: np.ndarray, pixels: np.ndarray, pose: Pose, K: CameraIntrinsics):
    """Source-image (u, v) and source depth of target pixels (..., 2 as (v, u))."""
    v = pixels[..., 0].astype(np.float64)
    u = pixels[..., 1].astype(np.float64)
    ray = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    Y = depth[..., None] * (ray @ pose.R.T) + pose.t
    z = Y[..., 2]
    zs = np.where(np.abs(z) > Z_MIN, z, Z_MIN)
    uv = np.stack([K.fx * Y[..., 0] / zs + K.cx, K.fy * Y[..., 1] / zs + K.cy], axis=-1)
    return uv, z


@dataclass
class WarpResult:
    colors: np.ndarray  # (N, M, C) sampled source colors
    in_bounds: np.ndarray  # (N,) patch usable
    coords: np.ndarray  # (N, M, 2) source (u, v)
    dcolor_ddepth: np.ndarray  # (N, M, C)


def _bilinear(img: np.ndarray, uv: np.ndarray):
    H, W = img.shape[:2]
    u = np.clip(uv[..., 0], 0.0, W - 1.0)
    v = np.clip(uv[..., 1], 0.0, H - 1.0)
    x0 = np.minimum(np.floor(u).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(v).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    a = (u - x0)[..., None]
    b = (v - y0)[..., None]
    I00, I01, I10, I11 = img[y0, x0], img[y0, x1], img[y1, x0], img[y1, x1]
    val = (1 - a) * (1 - b) * I00 + a * (1 - b) * I01 + (1 - a) * b * I10 + a * b * I11
    du = (1 - b) * (I01 - I00) + b * (I11 - I10)
    dv = (1 - a) * (I10 - I00) + a * (I11 - I01)
    return val, du, dv


def warp_patches(I_s: np.ndarray, depth_t: DepthMap, pose: Pose, K: CameraIntrinsics,
                 patches: PatchSet) -> WarpResult:
    """Bilinearly sample the source image at every target patch sample.

    A patch is out of bounds when any of its samples has invalid depth, lands
    behind the source camera, or falls outside the source image.
    """
    I_s = np.asarray(I_s, dtype=np.float64)
    if I_s.ndim == 2:
        I_s = I_s[..., None]
    H, W = I_s.shape[:2]
    px = patches.pixels
    D = depth_t.values[px[..., 0], px[..., 1]]
    dvalid = depth_t.valid[px[..., 0], px[..., 1]]
    uv, z = warp_coordinates(np.where(dvalid, D, 1.0), px, pose, K)
    inside = ((z > Z_MIN) & dvalid & (uv[..., 0] >= 0) & (uv[..., 0] <= W - 1)
              & (uv[..., 1] >= 0) & (uv[..., 1] <= H - 1))
    ok = inside.all(axis=1)
    colors, dI_du, dI_dv = _bilinear(I_s, uv)

    # d(u, v)/dD with Y = D * R ray + t
    v = px[..., 0].astype(np.float64)
    u = px[..., 1].astype(np.float64)
    ray = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    a = ray @ pose.R.T
    Y = np.where(dvalid, D, 1.0)[..., None] * a + pose.t
    zs = np.where(np.abs(Y[..., 2]) > Z_MIN, Y[..., 2], Z_MIN)
    du_dD = K.fx * (a[..., 0] * zs - Y[..., 0] * a[..., 2]) / zs ** 2
    dv_dD = K.fy * (a[..., 1] * zs - Y[..., 1] * a[..., 2]) / zs ** 2
    dcolor = dI_du * du_dD[..., None] + dI_dv * dv_dD[..., None]
    return WarpResult(colors=colors, in_bounds=ok, coords=uv, dcolor_ddepth=dcolor)


def ssim(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM map from 3x3 mean-filtered statistics over the valid window positions.

    Inputs are H x W or H x W x C on [0, 1]; the output has shape
    (H - 2) x (W - 2)[ x C].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError("ssim inputs must share a shape")

    def mean3(x):
        return sliding_window_view(x, (3, 3), axis=(0, 1)).mean(axis=(-2, -1))

    mu_a, mu_b = mean3(a), mean3(b)
    var_a = mean3(a * a) - mu_a ** 2
    var_b = mean3(b * b) - mu_b ** 2
    cov = mean3(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) / ((mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2))


def ssim_loss(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (1.0 - ssim(a, b)) / 2.0


def _patch_error(T: np.ndarray, S: np.ndarray, omega: float):
    """Per-patch omega (1 - SSIM)/2 + (1 - omega) L1 and its gradient w.r.t. S.

    T, S are (N, M, C); SSIM statistics run over the M patch samples per
    channel and are averaged over channels.
    """
    N, M, C = S.shape
    mu_t = T.mean(axis=1)
    mu_s = S.mean(axis=1)
    dt = T - mu_t[:, None]
    ds = S - mu_s[:, None]
    var_t = (dt ** 2).mean(axis=1)
    var_s = (ds ** 2).mean(axis=1)
    cov = (dt * ds).mean(axis=1)
    A = 2 * mu_t * mu_s + C1
    B = 2 * cov + C2
    P = mu_t ** 2 + mu_s ** 2 + C1
    Q = var_t + var_s + C2
    s = A * B / (P * Q)  # (N, C)
    diff = S - T
    err = omega * (1 - s.mean(axis=1)) / 2 + (1 - omega) * np.abs(diff).mean(axis=(1, 2))

    # ds/dS_j via the statistics: mu_s -> 1/M, var_s -> 2 ds_j/M, cov -> dt_j/M
    dA = 2 * mu_t / M
    ds_dS = ((dA[:, None] * B[:, None] * P[:, None] * Q[:, None]
              + A[:, None] * (2 * dt / M) * P[:, None] * Q[:, None]
              - A[:, None] * B[:, None] * (2 * mu_s[:, None] / M) * Q[:, None]
              - A[:, None] * B[:, None] * P[:, None] * (2 * ds / M))
             / (P * Q)[:, None] ** 2)
    g = -omega / (2 * C) * ds_dS + (1 - omega) * np.sign(diff) / (M * C)
    return err, g


def photometric_loss(I_t: np.ndarray, I_s_list: Sequence[np.ndarray], depth_t: DepthMap,
                     poses: Sequence[Pose], K: CameraIntrinsics, patches: PatchSet,
                     omega: float = 0.85, want_grad: bool = True) -> LossTerm:
    """Mean over usable patches of the per-patch error, minimised over sources."""
    if len(I_s_list) == 0 or len(I_s_list) != len(poses):
        raise InputError("need one pose per source image and at least one source")
    I_t = np.asarray(I_t, dtype=np.float64)
    if I_t.ndim == 2:
        I_t = I_t[..., None]
    px = patches.pixels
    T = I_t[px[..., 0], px[..., 1]]
    errs, grads, oks, dcols = [], [], [], []
    for I_s, pose in zip(I_s_list, poses):
        w = warp_patches(I_s, depth_t, pose, K, patches)
        e, g = _patch_error(T, w.colors, omega)
        errs.append(np.where(w.in_bounds, e, np.inf))
        grads.append(g)
        oks.append(w.in_bounds)
        dcols.append(w.dcolor_ddepth)
    errs = np.stack(errs)
    best = np.argmin(errs, axis=0)  # lowest source index on ties
    usable = np.any(np.stack(oks), axis=0)
    n = int(usable.sum())
    if n == 0:
        return LossTerm(0.0, np.zeros(depth_t.shape) if want_grad else None)
    e_min = errs[best, np.arange(len(best))]
    value = float(e_min[usable].sum() / n)
    if not want_grad:
        return LossTerm(value)
    grad = np.zeros(depth_t.shape)
    for s in range(len(poses)):
        sel = usable & (best == s)
        if not sel.any():
            continue
        gD = np.sum(grads[s][sel] * dcols[s][sel], axis=-1) / n  # (n_sel, M)
        p = px[sel]
        np.add.at(grad, (p[..., 0], p[..., 1]), gD)
    return LossTerm(value, grad)


def smoothness_loss(depth: DepthMap, I_t: np.ndarray, want_grad: bool = True) -> LossTerm:
    """Edge-aware smoothness of mean-normalised inverse depth."""
    I_t = np.asarray(I_t, dtype=np.float64)
    if I_t.ndim == 2:
        I_t = I_t[..., None]
    D = depth.values
    rho = 1.0 / D
    m = rho.mean()
    r = rho / m
    wx = np.exp(-np.abs(np.diff(I_t, axis=1)).mean(axis=-1))
    wy = np.exp(-np.abs(np.diff(I_t, axis=0)).mean(axis=-1))
    gx = np.diff(r, axis=1)
    gy = np.diff(r, axis=0)
    value = float((np.abs(gx) * wx).mean() + (np.abs(gy) * wy).mean())
    if not want_grad:
        return LossTerm(value)
    sx = np.sign(gx) * wx / gx.size
    sy = np.sign(gy) * wy / gy.size
    g_r = np.zeros_like(D)
    g_r[:, 1:] += sx
    g_r[:, :-1] -= sx
    g_r[1:, :] += sy
    g_r[:-1, :] -= sy
    g_rho = (g_r - np.sum(g_r * r) / r.size) / m
    return LossTerm(value, -g_rho / D ** 2)
