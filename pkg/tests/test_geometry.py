import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwdepth.geometry import (CameraIntrinsics, DegenerateGeometryError, DepthMap, DominantDirections,
                              InputError, LineSegment, NoValidFrameError, backproject, compute_normals,
                              estimate_dominant_directions, normals_from_depth, vanishing_point_to_direction)
from mwdepth.optimize import finite_diff_grad
from mwdepth.synth import PLANE_NAMES, SceneSpec, TextureSpec, generate_room, perturb_lines, pose_from_angles

K640 = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def angle_deg(a, b):
    # atan2 keeps precision near zero, where acos of a cosine does not
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), abs(float(np.dot(a, b)))))


def frame_error(est: DominantDirections, R: np.ndarray) -> float:
    """Worst angle between a true axis and its closest estimated direction (sign-free)."""
    return max(min(angle_deg(g, d) for d in est.dirs) for g in R)


def test_intrinsics_validation_and_roundtrip():
    with pytest.raises(InputError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0, 4, 4)
    with pytest.raises(InputError):
        CameraIntrinsics(1.0, 1.0, 4.0, 0.0, 4, 4)
    with pytest.raises(InputError):
        CameraIntrinsics.from_dict({**K640.to_dict(), "skew": 0.0})
    assert CameraIntrinsics.from_dict(K640.to_dict()) == K640
    assert np.allclose(K640.matrix @ K640.inverse, np.eye(3))


def test_backproject_known_pixels():
    D = np.full(K640.shape, 2.0)
    P = backproject(DepthMap(D), K640).points
    assert np.allclose(P[240, 320], [0.0, 0.0, 2.0])
    K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 1000, 480)
    assert np.allclose(backproject(DepthMap(np.full(K.shape, 2.0)), K).points[240, 820], [2.0, 0.0, 2.0])
    Kid = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 3, 3)
    assert np.allclose(backproject(DepthMap(np.full((3, 3), 1.7)), Kid).points[0, 0], [0.0, 0.0, 1.7])


def test_backproject_rejects_shape_mismatch():
    with pytest.raises(InputError):
        backproject(DepthMap(np.ones((4, 4))), K640)


def test_depth_map_validity():
    D = DepthMap(np.array([[1.0, 0.0], [np.nan, 2.0]]))
    assert D.valid.tolist() == [[True, False], [False, True]]
    with pytest.raises(InputError):
        DepthMap(np.array([[1.0, -1.0]]), np.array([[True, True]]))


@given(u=st.floats(0, 639), v=st.floats(0, 479), d=st.floats(0.1, 50))
def test_project_inverts_backprojection(u, v, d):
    ray = K640.inverse @ np.array([u, v, 1.0])
    assert np.allclose(K640.project(d * ray), [u, v], atol=1e-8)


def test_vanishing_point_to_direction():
    assert np.allclose(vanishing_point_to_direction([320.0, 240.0, 1.0], K640), [0, 0, 1])
    assert np.allclose(vanishing_point_to_direction([1.0, 0.0, 0.0], K640), [1, 0, 0])
    assert np.allclose(vanishing_point_to_direction([820.0, 240.0, 1.0], K640), [2 ** -0.5, 0, 2 ** -0.5])
    with pytest.raises(InputError):
        vanishing_point_to_direction([0.0, 0.0, 0.0], K640)


def test_dominant_directions_validation():
    assert DominantDirections.canonical().candidates()[1].tolist() == [-1.0, 0.0, 0.0]
    with pytest.raises(InputError):
        DominantDirections(np.array([[1.0, 0, 0], [0.5, 0.5 ** 0.5 * 1.0, 0.5], [0, 0, 1]]))
    with pytest.raises(InputError):
        DominantDirections(np.eye(3) * 2)


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    return q if np.linalg.det(q) > 0 else -q


def _lines_along_frame(R, n_lines, rng, K=K640):
    """Project 3D segments parallel to the rows of R in front of the camera."""
    lines = []
    while len(lines) < n_lines:
        axis = R[len(lines) % 3]
        c = rng.uniform([-2, -1.5, 3], [2, 1.5, 8])
        a, b = c - 0.8 * axis, c + 0.8 * axis
        if a[2] < 0.5 or b[2] < 0.5:
            continue
        p0, p1 = K.project(a), K.project(b)
        if np.linalg.norm(p1 - p0) < 20:
            continue
        lines.append(LineSegment(tuple(p0), tuple(p1)))
    return lines


def test_exact_lines_recover_frame():
    rng = np.random.default_rng(0)
    for _ in range(5):
        R = _random_rotation(rng)
        est, inliers = estimate_dominant_directions(_lines_along_frame(R, 30, rng), K640)
        assert inliers == 30
        assert frame_error(est, R) < 1e-6
        assert np.allclose(est.dirs @ est.dirs.T, np.eye(3), atol=1e-9)


def test_noisy_lines_recover_frame_within_one_degree():
    rng = np.random.default_rng(1)
    for _ in range(5):
        R = _random_rotation(rng)
        lines = perturb_lines(_lines_along_frame(R, 30, rng), 0.5, rng)
        est, _ = estimate_dominant_directions(lines, K640, angle_tol=2.0)
        assert frame_error(est, R) < 1.0


def test_parallel_lines_have_no_frame():
    rng = np.random.default_rng(2)
    R = np.eye(3)
    lines = [l for i, l in enumerate(_lines_along_frame(R, 12, rng)) if i % 3 == 0]
    assert len(lines) == 4
    with pytest.raises(NoValidFrameError):
        estimate_dominant_directions(lines, K640)
    with pytest.raises(DegenerateGeometryError):
        estimate_dominant_directions(lines[:3], K640)


def test_rendered_room_edges_recover_room_axes():
    K = CameraIntrinsics(500.0, 500.0, 319.5, 239.5, 640, 480)
    pose = pose_from_angles((0.3, -0.2, -1.0), yaw=25, pitch=-10, roll=4)
    spec = SceneSpec(intrinsics=K, poses=[pose], textures={n: TextureSpec("checkerboard") for n in PLANE_NAMES})
    sc = generate_room(spec)
    est, _ = estimate_dominant_directions(sc.views[0].lines, K)
    assert frame_error(est, sc.directions(0).dirs) < 1e-6


def test_fronto_parallel_normals():
    K = CameraIntrinsics(100.0, 100.0, 31.5, 31.5, 64, 64)
    n = normals_from_depth(DepthMap(np.full(K.shape, 2.0)), K)
    assert not n.valid[:3].any() and not n.valid[:, -3:].any()
    assert np.allclose(n.normals[n.valid], [0.0, 0.0, -1.0])


def test_ramp_plane_normals_and_scale_invariance():
    K = CameraIntrinsics(100.0, 100.0, 31.5, 31.5, 64, 64)
    nstar = np.array([0.3, -0.2, -1.0])
    nstar /= np.linalg.norm(nstar)
    d = 2.5  # plane nstar . X + d = 0
    D = -d / (K.rays() @ nstar)
    n = normals_from_depth(DepthMap(D), K)
    err = np.degrees(np.arccos(np.clip(n.normals[n.valid] @ nstar, -1, 1)))
    assert err.max() < 0.1
    n3 = normals_from_depth(DepthMap(3.7 * D), K)
    assert np.allclose(n3.normals[n3.valid], n.normals[n.valid], atol=1e-12)


def test_invalid_depth_invalidates_neighbourhood():
    K = CameraIntrinsics(20.0, 20.0, 9.5, 9.5, 20, 20)
    D = np.full(K.shape, 2.0)
    D[10, 10] = 0.0
    n = normals_from_depth(DepthMap(D), K)
    assert not n.valid[10, 10] and not n.valid[10, 12] and n.valid[4, 4]


def test_normal_backward_matches_finite_differences():
    K = CameraIntrinsics(14.0, 14.0, 7.5, 7.5, 16, 16)
    rng = np.random.default_rng(3)
    D = 2.0 + 0.1 * rng.normal(size=K.shape)
    w = rng.normal(size=K.shape + (3,))

    def loss(x):
        n = compute_normals(backproject(DepthMap(x), K))
        return float(np.sum(np.where(n.valid[..., None], n.normals * w, 0.0)))

    n = compute_normals(backproject(DepthMap(D), K))
    g = n.backward(np.where(n.valid[..., None], w, 0.0))
    fd = finite_diff_grad(loss, D, 1e-5)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_line_segment_roundtrip_and_validation():
    l = LineSegment((1.0, 2.0), (3.0, 4.5))
    assert LineSegment.from_dict(l.to_dict()) == l
    with pytest.raises(InputError):
        LineSegment((1.0, 1.0), (1.0, 1.0))
