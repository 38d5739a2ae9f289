import numpy as np
import pytest

from conftest import gradient_instance, scene_inputs
from test_acceptance import bilinear_kinks, difference_kinks
from mwdepth.geometry import DepthMap, InputError, backproject, compute_normals
from mwdepth.manhattan import align_normals, manhattan_mask
from mwdepth.metrics import depth_metrics
from mwdepth.optimize import (RefineConfig, RefineDivergedError, Signals, descent_direction, finite_diff_grad,
                              refine_depth, total_loss)
from mwdepth.photometric import dense_patches
from mwdepth.plane import coplanar_depth_map, fit_segments
from mwdepth.segmentation import Segment, SegmentationResult
from mwdepth.synth import SceneSpec, TextureSpec, generate_room, noisy_depth, pose_from_angles


def test_config_defaults_and_overrides():
    c = RefineConfig()
    assert (c.lambda_smooth, c.lambda_norm, c.lambda_plane, c.omega) == (0.001, 0.05, 0.1, 0.85)
    assert (c.schedule.alpha, c.schedule.beta) == (1.633e-3, 0.9)
    c2 = c.with_override("segmentation.k", "0.3").with_override("epochs", 5)
    assert c2.segmentation.k == 0.3 and c2.epochs == 5 and c.segmentation.k == 0.15
    assert RefineConfig.from_dict(c2.to_dict()) == c2
    for key, value in (("nope", 1), ("segmentation.nope", 1), ("segmentation", 1), ("epochs", "x")):
        with pytest.raises(InputError):
            c.with_override(key, value)
    with pytest.raises(InputError):
        RefineConfig(lr=0.0)


def test_total_is_weighted_sum_of_terms():
    inputs, D, sig, cfg = gradient_instance(4)
    r = total_loss(DepthMap(D), inputs, sig, cfg)
    assert r.norm > 0 and r.plane > 0
    parts = r.photo + cfg.lambda_smooth * r.smooth + cfg.lambda_norm * r.norm + cfg.lambda_plane * r.plane
    assert abs(r.total - parts) < 1e-12
    bare = RefineConfig(lambda_norm=0.0, lambda_plane=0.0)
    r0 = total_loss(DepthMap(D), inputs, sig, bare)
    assert r0.total == r.photo + cfg.lambda_smooth * r.smooth


def _exact_signals(view, inputs, config):
    points = backproject(view.depth, inputs.K)
    align = align_normals(compute_normals(points), inputs.dirs)
    H, W = view.depth.shape
    flat = np.flatnonzero(align.valid.ravel())
    seg = SegmentationResult(np.where(align.valid, 1, 0), [Segment(1, flat, len(flat))])
    planes = fit_segments(points, seg)
    return Signals(gamma=0.9, align=align, manhattan=manhattan_mask(align, 0.9), segmentation=seg,
                   planes=planes, plane_depth=coplanar_depth_map(planes, seg, inputs.K))


def test_ground_truth_scores_zero_with_exact_signals():
    # fronto-parallel textured wall; sources shifted by whole pixels, so sampling is exact
    spec = SceneSpec(room_min=(-50, -50, -50), room_max=(50, 50, 2.0),
                     textures={"z+": TextureSpec("noise", scale=0.3)},
                     poses=[pose_from_angles((0, 0, 0)), pose_from_angles((0.04, 0, 0)),
                            pose_from_angles((-0.04, 0.04, 0))])
    sc = generate_room(spec)
    inputs = scene_inputs(sc)
    cfg = RefineConfig()
    sig = _exact_signals(sc.views[0], inputs, cfg)
    assert sig.planar.mean() > 0.8
    r = total_loss(sc.views[0].depth, inputs, sig, cfg)
    assert abs(r.total) < 1e-6


def test_total_gradient_matches_finite_differences():
    inputs, D, sig, cfg = gradient_instance(7)
    P = dense_patches(D.shape)
    g = total_loss(DepthMap(D), inputs, sig, cfg, True, P).gradient
    kink = (bilinear_kinks(D, inputs, 1e-4) | difference_kinks(D, 1e-4)
            | (sig.planar & (np.abs(D - sig.plane_depth.values) < 1e-3)))
    pixels = [(i, j) for i in range(4, 12) for j in range(4, 12) if not kink[i, j]]
    fd = finite_diff_grad(lambda x: total_loss(DepthMap(x), inputs, sig, cfg, False, P).total, D, pixels=pixels)
    sel = ~np.isnan(fd)
    assert np.linalg.norm(g[sel] - fd[sel]) / np.linalg.norm(fd[sel]) < 1e-3


def test_finite_diff_oracles():
    D = np.full((3, 4), 3.0)
    # a power-of-two step keeps every sum exact, so the linear case is exact too
    assert np.array_equal(finite_diff_grad(lambda x: float(x.sum()), D, 2.0 ** -13), np.ones_like(D))
    assert np.allclose(finite_diff_grad(lambda x: float((x ** 2).sum()), D), 6.0, atol=1e-8)
    with pytest.raises(InputError):
        finite_diff_grad(lambda x: 0.0, D, eps=0.0)


@pytest.mark.parametrize("seed", range(50))
def test_line_search_step_never_increases_loss(seed):
    inputs, D, sig, cfg = gradient_instance(seed % 20, noise=0.02 + 0.001 * seed)
    P = dense_patches(D.shape)
    rep = total_loss(DepthMap(D), inputs, sig, cfg, True, P)
    g = descent_direction(DepthMap(D), rep, sig, cfg) * D
    scale = 1.0
    for _ in range(cfg.max_halvings + 1):
        new = total_loss(DepthMap(D * np.exp(-cfg.lr * D.size * scale * g)), inputs, sig, cfg, False, P)
        if new.total < rep.total:
            break
        scale *= 0.5
    assert new.total <= rep.total


def test_zero_epochs_is_identity(white_room):
    init = noisy_depth(white_room.views[0].depth, 0.2, seed=1)
    out = refine_depth(init, scene_inputs(white_room), RefineConfig(epochs=0))
    assert np.array_equal(out.depth.values, init.values) and out.history == []


def test_history_is_reproducible(white_room):
    init = noisy_depth(white_room.views[0].depth, 0.2, seed=2)
    cfg = RefineConfig(epochs=3, warmup_epochs=1, steps_per_epoch=3)
    a = refine_depth(init, scene_inputs(white_room), cfg)
    b = refine_depth(init, scene_inputs(white_room), cfg)
    assert [r["epoch"] for r in a.history] == [0, 1, 2]
    assert np.array_equal(a.depth.values, b.depth.values)
    assert a.history == b.history or all(
        all((x == y) or (x != x and y != y) for x, y in zip(ra.values(), rb.values()))
        for ra, rb in zip(a.history, b.history))


def test_divergence_guard(white_room):
    init = noisy_depth(white_room.views[0].depth, 0.2, seed=3)
    cfg = RefineConfig(epochs=3, warmup_epochs=0, steps_per_epoch=1, divergence_factor=1e-9)
    with pytest.raises(RefineDivergedError):
        refine_depth(init, scene_inputs(white_room), cfg)


def test_ground_truth_is_a_fixed_point(white_room):
    gt = white_room.views[0].depth
    out = refine_depth(gt, scene_inputs(white_room), RefineConfig())
    assert depth_metrics(out.depth, gt).absrel < 0.005
