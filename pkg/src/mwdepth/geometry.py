"""Camera model, backprojection, dominant directions and depth-derived normals.

Pixel coordinates follow the pixel-center convention: ``u`` is the column
index, ``v`` the row index, and the top-left pixel center sits at (0, 0).
Camera frame is x right, y down, z forward.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NORMAL_RADII = (1, 2, 3)


class InputError(ValueError):
    """Inputs with inconsistent shapes or values outside their contract."""


class DegenerateGeometryError(ValueError):
    """Geometry that admits no well-defined answer (zero vectors, rank loss)."""


class NoValidFrameError(DegenerateGeometryError):
    """Line evidence does not support a Manhattan frame."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise InputError("image size must be at least 1x1")
        # cx = 0 is allowed so that the identity-like camera is representable
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError(f"principal point ({self.cx}, {self.cy}) outside image")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    def rays(self) -> np.ndarray:
        """H x W x 3 array of K^-1 (u, v, 1) with unit z component."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        out = np.empty((self.height, self.width, 3))
        out[..., 0] = (u - self.cx) / self.fx
        out[..., 1] = (v - self.cy) / self.fy
        out[..., 2] = 1.0
        return out

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points (..., 3) to pixel coordinates (..., 2)."""
        points = np.asarray(points, dtype=np.float64)
        z = points[..., 2]
        return np.stack([self.fx * points[..., 0] / z + self.cx,
                         self.fy * points[..., 1] / z + self.cy], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        unknown = set(d) - {"fx", "fy", "cx", "cy", "width", "height"}
        if unknown:
            raise InputError(f"unknown intrinsics keys: {sorted(unknown)}")
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass
class DepthMap:
    values: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InputError(f"depth must be H x W, got shape {self.values.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.values) & (self.values > 0)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise InputError("depth validity mask shape mismatch")
            if np.any(~(self.values[self.valid] > 0)):
                raise InputError("depth must be strictly positive on valid pixels")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class PointMap:
    points: np.ndarray
    valid: np.ndarray
    rays: Optional[np.ndarray] = None


@dataclass
class NormalMap:
    """Unit normals with a validity mask.

    When produced by :func:`compute_normals` from a point map that knows its
    rays, the map keeps what it needs to push a normal-space gradient back to
    depth; see :meth:`backward`.
    """

    normals: np.ndarray
    valid: np.ndarray
    _tape: Optional["_NormalTape"] = field(default=None, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def backward(self, grad_normals: np.ndarray) -> np.ndarray:
        """Chain a dL/dn field (H x W x 3) to dL/dD (H x W).

        Entries of ``grad_normals`` at invalid pixels are ignored.
        """
        if self._tape is None:
            raise InputError("normal map carries no backward information")
        return self._tape.backward(np.where(self.valid[..., None], grad_normals, 0.0))


@dataclass(frozen=True)
class LineSegment:
    p0: tuple[float, float]
    p1: tuple[float, float]

    def __post_init__(self):
        if tuple(self.p0) == tuple(self.p1):
            raise InputError("line segment endpoints coincide")

    def to_dict(self) -> dict:
        return {"x0": self.p0[0], "y0": self.p0[1], "x1": self.p1[0], "y1": self.p1[1]}

    @classmethod
    def from_dict(cls, d: dict) -> "LineSegment":
        return cls((float(d["x0"]), float(d["y0"])), (float(d["x1"]), float(d["y1"])))


@dataclass(frozen=True)
class DominantDirections:
    """Three orthonormal directions; rows of ``dirs``."""

    dirs: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dirs, dtype=np.float64)
        if d.shape != (3, 3):
            raise InputError(f"expected three 3-vectors, got shape {d.shape}")
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-6):
            raise InputError("dominant directions must be unit vectors")
        gram = np.abs(d @ d.T - np.eye(3))
        if gram.max() >= 1e-3:
            raise InputError("dominant directions must be mutually orthogonal")
        object.__setattr__(self, "dirs", d)

    def candidates(self) -> np.ndarray:
        """Signed candidates in tie-break order d1, -d1, d2, -d2, d3, -d3."""
        d = self.dirs
        return np.stack([d[0], -d[0], d[1], -d[1], d[2], -d[2]])

    @classmethod
    def canonical(cls) -> "DominantDirections":
        return cls(np.eye(3))


def _check_shape(depth: DepthMap, K: CameraIntrinsics):
    if depth.shape != K.shape:
        raise InputError(f"depth shape {depth.shape} does not match intrinsics {K.shape}")


def backproject(depth: DepthMap, K: CameraIntrinsics) -> PointMap:
    _check_shape(depth, K)
    rays = K.rays()
    d = np.where(depth.valid, depth.values, 0.0)
    return PointMap(points=d[..., None] * rays, valid=depth.valid.copy(), rays=rays)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    for c in (2, 0, 1):
        if v[c] != 0:
            return v if v[c] > 0 else -v
    return v


def vanishing_point_to_direction(v, K: CameraIntrinsics) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,) or not np.any(v):
        raise InputError("vanishing point must be a nonzero homogeneous 3-vector")
    d = K.inverse @ v
    n = np.linalg.norm(d)
    if n < 1e-12 * np.linalg.norm(v):
        raise DegenerateGeometryError("K^-1 v is numerically zero")
    return _canonical_sign(d / n)


# ---------------------------------------------------------------------------
# dominant directions from line segments


def _interpretation_normals(lines: Sequence[LineSegment], K: CameraIntrinsics) -> np.ndarray:
    p0 = np.array([[l.p0[0], l.p0[1], 1.0] for l in lines])
    p1 = np.array([[l.p1[0], l.p1[1], 1.0] for l in lines])
    m = np.cross(p0, p1) @ K.matrix  # row-vector form of K^T (p0 x p1)
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _normalize_rows(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    return a / np.where(n > 0, n, 1.0), n[..., 0]


def _score(frames: np.ndarray, m: np.ndarray, sin_tol: float):
    """Inlier counts and residual sums for a stack of frames (F, 3, 3)."""
    res = np.abs(np.einsum("fkc,nc->fnk", frames, m)).min(axis=2)
    inl = res <= sin_tol
    return inl.sum(axis=1), np.where(inl, res ** 2, 0.0).sum(axis=1)


def _refine_frame(frame: np.ndarray, m: np.ndarray, sin_tol: float, iters: int = 20) -> np.ndarray:
    """Gauss-Newton on SO(3): minimise sum (m_i . d_k(i))^2 over inlier lines."""
    R = frame.copy()
    for _ in range(iters):
        proj = np.abs(m @ R.T)
        k = proj.argmin(axis=1)
        inl = proj[np.arange(len(m)), k] <= sin_tol
        if inl.sum() < 3:
            break
        mi, di = m[inl], R[k[inl]]
        r = np.einsum("nc,nc->n", mi, di)
        J = np.cross(di, mi)
        w, *_ = np.linalg.lstsq(J, -r, rcond=None)
        theta = np.linalg.norm(w)
        if theta > 0:
            a = w / theta
            A = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
            rot = np.eye(3) + np.sin(theta) * A + (1 - np.cos(theta)) * A @ A
            R = R @ rot.T
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        if theta < 1e-15:
            break
    return R


def estimate_dominant_directions(
    lines: Sequence[LineSegment],
    K: CameraIntrinsics,
    angle_tol: float = 2.0,
    max_pairs: int = 300,
    seed: int = 0,
) -> tuple[DominantDirections, int]:
    """Consensus search for a Manhattan frame from line segments.

    Every pair of lines proposes a first direction (the intersection of their
    interpretation planes); every second pair proposes a second direction,
    orthogonalised against the first; the third is their cross product. The
    frame with the most lines within ``angle_tol`` degrees of one of its
    directions wins and is then polished by least squares on its inliers.
    Pairs are enumerated exhaustively up to ``max_pairs``, beyond which a
    seeded subset is drawn.

    Returns the directions, ordered by descending inlier support with
    ``d3 = d1 x d2``, and the inlier count.
    """
    if len(lines) < 4:
        raise NoValidFrameError(f"need at least 4 line segments, got {len(lines)}")
    m = _interpretation_normals(lines, K)
    sin_tol = np.sin(np.deg2rad(angle_tol))

    pairs = np.array(list(itertools.combinations(range(len(m)), 2)))
    if len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        pairs = pairs[np.sort(rng.choice(len(pairs), max_pairs, replace=False))]
    pdirs, pn = _normalize_rows(np.cross(m[pairs[:, 0]], m[pairs[:, 1]]))
    pdirs = pdirs[pn > 1e-12]
    if len(pdirs) == 0:
        raise NoValidFrameError("all line pairs are degenerate")

    best = (-1, np.inf, None)
    chunk = max(1, 200_000 // max(len(pdirs), 1))
    for start in range(0, len(pdirs), chunk):
        d1 = pdirs[start:start + chunk][:, None, :]  # (a, 1, 3)
        d2 = pdirs[None, :, :] - np.sum(pdirs[None] * d1, axis=-1, keepdims=True) * d1
        d2, n2 = _normalize_rows(d2)
        ok = n2 > 0.1  # second pair must not share the first vanishing point
        if not ok.any():
            continue
        d1b = np.broadcast_to(d1, d2.shape)[ok]
        d2 = d2[ok]
        frames = np.stack([d1b, d2, np.cross(d1b, d2)], axis=1)
        count, resid = _score(frames, m, sin_tol)
        # best count, then smallest residual, first occurrence on ties
        i = np.lexsort((resid, -count))[0]
        if count[i] > best[0] or (count[i] == best[0] and resid[i] < best[1]):
            best = (int(count[i]), float(resid[i]), frames[i])

    if best[2] is None:
        raise NoValidFrameError("no line pair pair spans two vanishing directions")
    frame = _refine_frame(best[2], m, sin_tol)

    proj = np.abs(m @ frame.T)
    k = proj.argmin(axis=1)
    inl = proj[np.arange(len(m)), k] <= sin_tol
    support = np.array([np.sum(inl & (k == j)) for j in range(3)])
    total = int(inl.sum())
    if total < 4 or np.sum(support >= 2) < 2:
        raise NoValidFrameError(
            f"best consensus has {total} inliers with support {support.tolist()}; "
            "need 4 inliers over at least two vanishing directions")
    order = np.argsort(-support, kind="stable")
    d1 = _canonical_sign(frame[order[0]])
    d2 = _canonical_sign(frame[order[1]])
    d2 = d2 - (d2 @ d1) * d1
    d2 /= np.linalg.norm(d2)
    return DominantDirections(np.stack([d1, d2, np.cross(d1, d2)])), total


# ---------------------------------------------------------------------------
# normals


class _NormalTape:
    """Interior-region intermediates of :func:`compute_normals`."""

    def __init__(self, rays, radii, a, b, chat, c_norm, sign, ok):
        self.rays = rays
        self.radii = radii
        self.a = a
        self.b = b
        self.chat = chat
        self.c_norm = c_norm
        self.sign = sign
        self.ok = ok

    def backward(self, g_n: np.ndarray) -> np.ndarray:
        H, W = self.rays.shape[:2]
        R = max(self.radii)
        g = self.sign[..., None] * g_n[R:H - R, R:W - R]
        chat = self.chat
        # n = s c/|c|, so dL/dc = s (I - chat chat^T) dL/dn / |c|
        g_c = (g - np.sum(g * chat, axis=-1, keepdims=True) * chat)
        g_c /= np.where(self.ok, self.c_norm, 1.0)[..., None]
        g_c[~self.ok] = 0.0
        g_X = np.zeros((H, W, 3))
        for r, a, b in zip(self.radii, self.a, self.b):
            g_a = np.cross(b, g_c)
            g_b = np.cross(g_c, a)
            g_X[R + r:H - R + r, R:W - R] += g_a
            g_X[R - r:H - R - r, R:W - R] -= g_a
            g_X[R:H - R, R + r:W - R + r] += g_b
            g_X[R:H - R, R - r:W - R - r] -= g_b
        return np.sum(g_X * self.rays, axis=-1)


def compute_normals(points: PointMap, radii: Sequence[int] = NORMAL_RADII) -> NormalMap:
    """Normals from symmetric cross products over a (2R+1)^2 window.

    For each interior pixel the sum over radii r of
    (X[v+r, u] - X[v-r, u]) x (X[v, u+r] - X[v, u-r]) is normalised and
    flipped to face the camera. Pixels within R = max(radii) of the border,
    or with an invalid point among the samples, are invalid.
    """
    X, valid = points.points, points.valid
    H, W = valid.shape
    R = max(radii)
    normals = np.zeros((H, W, 3))
    out_valid = np.zeros((H, W), dtype=bool)
    if H <= 2 * R or W <= 2 * R:
        return NormalMap(normals, out_valid)

    c = np.zeros((H - 2 * R, W - 2 * R, 3))
    ok = valid[R:H - R, R:W - R].copy()
    a_list, b_list = [], []
    for r in radii:
        a = X[R + r:H - R + r, R:W - R] - X[R - r:H - R - r, R:W - R]
        b = X[R:H - R, R + r:W - R + r] - X[R:H - R, R - r:W - R - r]
        ok &= valid[R + r:H - R + r, R:W - R] & valid[R - r:H - R - r, R:W - R]
        ok &= valid[R:H - R, R + r:W - R + r] & valid[R:H - R, R - r:W - R - r]
        c += np.cross(a, b)
        a_list.append(a)
        b_list.append(b)
    cn = np.linalg.norm(c, axis=-1)
    ok &= cn > 1e-300
    chat = c / np.where(cn > 0, cn, 1.0)[..., None]
    sign = np.where(np.sum(chat * X[R:H - R, R:W - R], axis=-1) > 0, -1.0, 1.0)
    n = sign[..., None] * chat
    n[~ok] = 0.0
    normals[R:H - R, R:W - R] = n
    out_valid[R:H - R, R:W - R] = ok

    tape = None
    if points.rays is not None:
        tape = _NormalTape(points.rays, tuple(radii), a_list, b_list, chat, cn, sign, ok)
    return NormalMap(normals, out_valid, tape)


def normals_from_depth(depth: DepthMap, K: CameraIntrinsics,
                       radii: Sequence[int] = NORMAL_RADII) -> NormalMap:
    return compute_normals(backproject(depth, K), radii)
