"""Synthetic box rooms with exact depth, normals, plane ids, edge lines and renders.

World axes match the camera at identity rotation: x right, y down, z forward,
so the floor is the ``y+`` wall. A room is the intersection of half-spaces
n . X <= c; with ``slant_deg`` the far (``z+``) wall is tilted about the
vertical axis, which breaks the Manhattan assumption on purpose.

Edge lines are the visible room edges plus, on checkerboard walls, the
boundaries between squares.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, DominantDirections, InputError, LineSegment, NormalMap
from .photometric import Pose

PLANE_NAMES = ("x-", "x+", "y-", "y+", "z-", "z+")
Z_NEAR = 1e-3


@dataclass
class TextureSpec:
    kind: str = "uniform"  # uniform | checkerboard | noise
    colors: list = field(default_factory=lambda: [[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    scale: float = 0.5  # checker square side / noise base wavelength, meters
    amplitude: float = 0.35

    def __post_init__(self):
        if self.kind not in ("uniform", "checkerboard", "noise"):
            raise InputError(f"unknown texture kind {self.kind!r}")
        if not self.scale > 0:
            raise InputError("texture scale must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "colors": [list(map(float, c)) for c in self.colors],
                "scale": self.scale, "amplitude": self.amplitude}


@dataclass
class SceneSpec:
    room_min: tuple = (-2.0, -1.5, -2.0)
    room_max: tuple = (2.0, 1.5, 3.0)
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(50.0, 50.0, 31.5, 31.5, 64, 64))
    poses: list = field(default_factory=lambda: [Pose.identity()])  # world -> camera
    textures: dict = field(default_factory=dict)  # plane name -> TextureSpec
    seed: int = 0
    slant_deg: float = 0.0

    def __post_init__(self):
        lo, hi = np.asarray(self.room_min, float), np.asarray(self.room_max, float)
        if not np.all(hi > lo):
            raise InputError("room extents must be positive")
        for name in self.textures:
            if name not in PLANE_NAMES:
                raise InputError(f"unknown wall {name!r}; expected one of {PLANE_NAMES}")
        if not self.poses:
            raise InputError("scene needs at least one camera pose")

    def texture(self, name: str) -> TextureSpec:
        return self.textures.get(name, TextureSpec())

    def to_dict(self) -> dict:
        return {
            "room_min": list(map(float, self.room_min)),
            "room_max": list(map(float, self.room_max)),
            "intrinsics": self.intrinsics.to_dict(),
            "poses": [p.to_dict() for p in self.poses],
            "textures": {k: v.to_dict() for k, v in sorted(self.textures.items())},
            "seed": self.seed,
            "slant_deg": self.slant_deg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {"room_min", "room_max", "intrinsics", "poses", "textures", "seed", "slant_deg"}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown scene keys: {sorted(unknown)}")
        kw = {}
        if "room_min" in d:
            kw["room_min"] = tuple(d["room_min"])
        if "room_max" in d:
            kw["room_max"] = tuple(d["room_max"])
        if "intrinsics" in d:
            kw["intrinsics"] = CameraIntrinsics.from_dict(d["intrinsics"])
        if "poses" in d:
            kw["poses"] = [Pose.from_dict(p) for p in d["poses"]]
        if "textures" in d:
            kw["textures"] = {k: TextureSpec(**v) for k, v in d["textures"].items()}
        for k in ("seed", "slant_deg"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)


@dataclass
class ViewRender:
    image: np.ndarray  # H x W x 3 in [0, 1]
    depth: DepthMap
    normals: NormalMap
    plane_ids: np.ndarray  # H x W, 1-based index into PLANE_NAMES
    lines: list


@dataclass
class SceneRender:
    spec: SceneSpec
    views: list

    @property
    def K(self) -> CameraIntrinsics:
        return self.spec.intrinsics

    def relative_pose(self, target: int, source: int) -> Pose:
        """Transform from the target camera frame to the source camera frame."""
        return self.spec.poses[source].compose(self.spec.poses[target].inverse())

    def directions(self, view: int = 0) -> DominantDirections:
        """Room axes expressed in the given camera frame (rows)."""
        return DominantDirections(self.spec.poses[view].R.T.copy())


def pose_from_angles(position, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> Pose:
    """World-to-camera pose of a camera at ``position`` rotated by yaw (about y),
    pitch (about x) and roll (about z), angles in degrees."""
    y, p, r = np.deg2rad([yaw, pitch, roll])
    Ry = np.array([[np.cos(y), 0, np.sin(y)], [0, 1, 0], [-np.sin(y), 0, np.cos(y)]])
    Rx = np.array([[1, 0, 0], [0, np.cos(p), -np.sin(p)], [0, np.sin(p), np.cos(p)]])
    Rz = np.array([[np.cos(r), -np.sin(r), 0], [np.sin(r), np.cos(r), 0], [0, 0, 1]])
    c2w = Ry @ Rx @ Rz
    R = c2w.T
    return Pose(R, -R @ np.asarray(position, dtype=np.float64))


def _halfspaces(spec: SceneSpec):
    lo = np.asarray(spec.room_min, float)
    hi = np.asarray(spec.room_max, float)
    normals, offsets = [], []
    for a in range(3):
        e = np.zeros(3)
        e[a] = 1.0
        normals += [-e, e]
        offsets += [-lo[a], hi[a]]
    normals = np.array(normals)
    offsets = np.array(offsets)
    if spec.slant_deg:
        s = np.deg2rad(spec.slant_deg)
        n = np.array([np.sin(s), 0.0, np.cos(s)])
        anchor = np.array([0.5 * (lo[0] + hi[0]), 0.0, hi[2]])
        normals[5] = n
        offsets[5] = n @ anchor
    return normals, offsets


def _plane_basis(n: np.ndarray):
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def _texture(spec: SceneSpec, plane: int, X: np.ndarray, normal: np.ndarray) -> np.ndarray:
    tex = spec.texture(PLANE_NAMES[plane])
    colors = np.asarray(tex.colors, dtype=np.float64)
    if tex.kind == "uniform":
        return np.broadcast_to(colors[0], X.shape).copy()
    e1, e2 = _plane_basis(normal)
    a, b = X @ e1, X @ e2
    if tex.kind == "checkerboard":
        parity = (np.floor(a / tex.scale) + np.floor(b / tex.scale)).astype(np.int64) % 2
        return colors[parity]
    # smooth band-limited noise: a few plane-wave sinusoids per channel
    rng = np.random.default_rng([spec.seed, plane])
    out = np.broadcast_to(colors[0] * 0 + 0.5, X.shape).copy()
    n_waves = 4
    for c in range(3):
        ang = rng.uniform(0, np.pi, n_waves)
        freq = 2 * np.pi / (tex.scale * rng.uniform(1.0, 3.0, n_waves))
        phase = rng.uniform(0, 2 * np.pi, n_waves)
        for k in range(n_waves):
            out[:, c] += tex.amplitude / n_waves * np.sin(
                freq[k] * (np.cos(ang[k]) * a + np.sin(ang[k]) * b) + phase[k])
    return np.clip(out, 0.0, 1.0)


def _clip_segment_2d(p0, p1, W, H):
    """Liang-Barsky clip of a segment to [0, W-1] x [0, H-1]."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], p0[0]), (d[0], W - 1 - p0[0]), (-d[1], p0[1]), (d[1], H - 1 - p0[1])):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return p0 + t0 * d, p0 + t1 * d


def _clip_line(P0, direction, normals, offsets, skip):
    """Segment of the line P0 + s * direction inside every half-space not in ``skip``."""
    lo, hi = -np.inf, np.inf
    for k in range(len(normals)):
        if k in skip:
            continue
        den = normals[k] @ direction
        num = offsets[k] - normals[k] @ P0
        if abs(den) < 1e-12:
            if num < -1e-9:
                return None
            continue
        s = num / den
        if den > 0:
            hi = min(hi, s)
        else:
            lo = max(lo, s)
    if hi - lo > 1e-9:
        return P0 + lo * direction, P0 + hi * direction
    return None


def _room_edges(normals, offsets):
    edges = []
    n = len(normals)
    for i in range(n):
        for j in range(i + 1, n):
            direction = np.cross(normals[i], normals[j])
            if np.linalg.norm(direction) < 1e-9:
                continue
            A = np.stack([normals[i], normals[j], direction])
            P0 = np.linalg.solve(A, np.array([offsets[i], offsets[j], 0.0]))
            seg = _clip_line(P0, direction, normals, offsets, (i, j))
            if seg is not None:
                edges.append(seg)
    return edges


def _checker_edges(spec: SceneSpec, normals, offsets):
    """Boundaries between checkerboard squares, as 3D segments on their walls."""
    corners = np.array([[x, y, z] for x in (spec.room_min[0], spec.room_max[0])
                        for y in (spec.room_min[1], spec.room_max[1])
                        for z in (spec.room_min[2], spec.room_max[2])], dtype=np.float64)
    edges = []
    for k, name in enumerate(PLANE_NAMES):
        tex = spec.texture(name)
        if tex.kind != "checkerboard":
            continue
        n, c = normals[k], offsets[k]
        basis = _plane_basis(n)
        for across, along in (basis, basis[::-1]):
            proj = corners @ across
            first = int(np.ceil(proj.min() / tex.scale))
            last = int(np.floor(proj.max() / tex.scale))
            for i in range(first, last + 1):
                seg = _clip_line(c * n + i * tex.scale * across, along, normals, offsets, (k,))
                if seg is not None:
                    edges.append(seg)
    return edges


def _project_edges(edges, pose: Pose, K: CameraIntrinsics, min_len: float = 2.0):
    out = []
    for A, B in edges:
        a, b = pose.apply(A), pose.apply(B)
        if a[2] < Z_NEAR and b[2] < Z_NEAR:
            continue
        if a[2] < Z_NEAR or b[2] < Z_NEAR:
            s = (Z_NEAR - a[2]) / (b[2] - a[2])
            c = a + s * (b - a)
            a, b = (c, b) if a[2] < Z_NEAR else (a, c)
        p0, p1 = K.project(a), K.project(b)
        clipped = _clip_segment_2d(p0, p1, K.width, K.height)
        if clipped is None:
            continue
        q0, q1 = clipped
        if np.linalg.norm(q1 - q0) < min_len:
            continue
        out.append(LineSegment((float(q0[0]), float(q0[1])), (float(q1[0]), float(q1[1]))))
    return out


def render_view(spec: SceneSpec, pose: Pose) -> ViewRender:
    K = spec.intrinsics
    normals, offsets = _halfspaces(spec)
    C = -pose.R.T @ pose.t
    if np.any(normals @ C >= offsets):
        raise InputError("camera must be strictly inside the room")
    rays = K.rays().reshape(-1, 3)
    w = rays @ pose.R  # world directions, R^T r for each row r
    den = w @ normals.T  # (HW, P)
    num = offsets - normals @ C
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(den > 0, num / den, np.inf)
    plane = np.argmin(t, axis=1)
    depth = t[np.arange(len(t)), plane]
    Xw = C + depth[:, None] * w
    inward = -normals[plane]
    n_cam = inward @ pose.R.T
    colors = np.zeros_like(Xw)
    for k in range(len(normals)):
        sel = plane == k
        if sel.any():
            colors[sel] = _texture(spec, k, Xw[sel], normals[k])
    H, W = K.shape
    lines = _project_edges(_room_edges(normals, offsets) + _checker_edges(spec, normals, offsets), pose, K)
    return ViewRender(
        image=colors.reshape(H, W, 3),
        depth=DepthMap(depth.reshape(H, W)),
        normals=NormalMap(n_cam.reshape(H, W, 3), np.ones((H, W), dtype=bool)),
        plane_ids=(plane + 1).reshape(H, W).astype(np.int64),
        lines=lines,
    )


def generate_room(spec: SceneSpec) -> SceneRender:
    return SceneRender(spec=spec, views=[render_view(spec, p) for p in spec.poses])


def plane_equations(spec: SceneSpec):
    """Outward normals and offsets (n . X <= c) of the room walls, world frame."""
    return _halfspaces(spec)


def perturb_lines(lines, sigma_deg: float, rng: np.random.Generator):
    """Rotate each segment about its midpoint by a Gaussian angle."""
    out = []
    for l in lines:
        p0, p1 = np.asarray(l.p0), np.asarray(l.p1)
        mid = 0.5 * (p0 + p1)
        a = np.deg2rad(rng.normal(0.0, sigma_deg))
        c, s = np.cos(a), np.sin(a)
        rot = np.array([[c, -s], [s, c]])
        q0, q1 = mid + rot @ (p0 - mid), mid + rot @ (p1 - mid)
        out.append(LineSegment(tuple(q0), tuple(q1)))
    return out


def noisy_depth(depth: DepthMap, level: float, seed: int) -> DepthMap:
    """Multiplicative noise: D * (1 + level * U(-1, 1)), per pixel, seeded."""
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-1.0, 1.0, depth.shape)
    return DepthMap(depth.values * (1.0 + level * noise), depth.valid.copy())


def orbit_poses(center, n_views: int = 3, baseline: float = 0.15, yaw: float = 0.0,
                pitch: float = 0.0, roll: float = 0.0):
    """Target pose at ``center`` plus sources displaced sideways/vertically by ``baseline``."""
    center = np.asarray(center, dtype=np.float64)
    poses = [pose_from_angles(center, yaw, pitch, roll)]
    offsets = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (1, 1, 0), (-1, -1, 0)]
    for i in range(n_views - 1):
        o = np.asarray(offsets[i % len(offsets)], float) * baseline
        c2w = poses[0].R.T
        poses.append(pose_from_angles(center + c2w @ o, yaw + (2.0 if i % 2 else -2.0), pitch, roll))
    return poses


def corner_spec(far: float = 50.0) -> SceneSpec:
    """Uniform white concave corner: walls x = 1 and z = 3 fill the view."""
    corner_yaw = float(np.degrees(np.arctan2(1.0, 3.0)))
    return SceneSpec(room_min=(-far, -far, -far), room_max=(1.0, far, 3.0),
                     poses=[pose_from_angles((0.0, 0.0, 0.0), yaw=corner_yaw)])


def checker_plane_spec(distance: float = 2.0, square: float = 0.25, far: float = 50.0) -> SceneSpec:
    """A single fronto-parallel checkerboard wall at ``distance`` filling the view."""
    return SceneSpec(room_min=(-far, -far, -far), room_max=(far, far, distance),
                     textures={"z+": TextureSpec("checkerboard", scale=square)})
