import numpy as np
import pytest

from mwdepth.geometry import DepthMap, InputError, NormalMap
from mwdepth.metrics import depth_metrics, normal_metrics


def test_perfect_prediction():
    gt = DepthMap(np.random.default_rng(0).uniform(1, 5, (8, 8)))
    m = depth_metrics(gt, gt)
    assert (m.rms, m.absrel, m.log10) == (0.0, 0.0, 0.0)
    assert (m.delta1, m.delta2, m.delta3) == (1.0, 1.0, 1.0)


def test_median_scaling_and_constant_ratio():
    gt = DepthMap(np.random.default_rng(1).uniform(1, 5, (8, 8)))
    assert depth_metrics(DepthMap(2 * gt.values), gt, median_scale=True) == depth_metrics(gt, gt)
    m = depth_metrics(DepthMap(1.3 * gt.values), gt)
    assert m.delta1 == 0.0 and m.delta2 == 1.0 and m.absrel == pytest.approx(0.3)


def test_cap_and_ordering():
    gt = DepthMap(np.array([[12.0, 3.0]]))
    pred = DepthMap(np.array([[20.0, 3.0]]))
    m = depth_metrics(pred, gt)
    assert m.rms == 0.0  # both capped at 10 m
    rng = np.random.default_rng(2)
    g = rng.uniform(1, 5, (16, 16))
    m = depth_metrics(DepthMap(g * np.exp(rng.normal(0, 0.5, g.shape))), DepthMap(g))
    assert 0 <= m.delta1 <= m.delta2 <= m.delta3 <= 1


def test_depth_errors():
    with pytest.raises(InputError):
        depth_metrics(DepthMap(np.ones((2, 2))), DepthMap(np.ones((3, 3))))
    with pytest.raises(InputError):
        depth_metrics(DepthMap(np.zeros((2, 2))), DepthMap(np.ones((2, 2))))


def test_normal_metrics_examples():
    ones = np.ones((4, 4), dtype=bool)
    n = np.zeros((4, 4, 3))
    n[..., 2] = 1.0
    m = normal_metrics(NormalMap(n, ones), NormalMap(n, ones))
    assert m.mean == 0.0 and (m.within_11_25, m.within_22_5, m.within_30) == (1.0, 1.0, 1.0)
    a = np.deg2rad(20)
    r = np.zeros((4, 4, 3))
    r[..., 0], r[..., 2] = np.sin(a), np.cos(a)
    m = normal_metrics(NormalMap(r, ones), NormalMap(n, ones))
    assert m.mean == pytest.approx(20.0)
    assert (m.within_11_25, m.within_22_5, m.within_30) == (0.0, 1.0, 1.0)
