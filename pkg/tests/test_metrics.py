import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rslf.data import PointCloud
from rslf.errors import NoMatches, ValidationError, ZeroGroundTruthDepth
from rslf.geometry import MotionState
from rslf.metrics import (
    MetricsReport,
    anchor_row,
    compute_metrics,
    distortion_summary,
    metrics_csv,
    to_anchor,
)
from rslf.simulate import random_scene, scenario, simulate

from oracles import brute_force_metrics


def cloud_from_depths(z, ids=None):
    z = np.asarray(z, dtype=float)
    pts = np.zeros((len(z), 3))
    pts[:, 2] = z
    return PointCloud(np.arange(len(z)) if ids is None else ids, pts)


def as_tuple(m: MetricsReport):
    return m.abs_rel, m.abs_diff, m.rms, m.delta1, m.delta2, m.delta3


def test_identity_gives_perfect_scores():
    c = cloud_from_depths([3.0, 7.0, 9.5])
    assert as_tuple(compute_metrics(c, c)) == (0.0, 0.0, 0.0, 1.0, 1.0, 1.0)


def test_single_point_arithmetic():
    m = compute_metrics(cloud_from_depths([1.1]), cloud_from_depths([1.0]))
    assert m.abs_rel == pytest.approx(0.1) and m.abs_diff == pytest.approx(0.1) and m.rms == pytest.approx(0.1)
    assert m.delta1 == 1.0 and m.n_points == 1


def test_two_point_arithmetic():
    m = compute_metrics(cloud_from_depths([1.0, 3.0]), cloud_from_depths([1.0, 1.0]))
    assert m.rms == pytest.approx(math.sqrt(2), rel=1e-15)
    assert m.delta1 == 0.5


def test_matches_brute_force_oracle(rng):
    gt = cloud_from_depths(rng.uniform(0.5, 10, 10_000))
    est = cloud_from_depths(gt.points[:, 2] * rng.uniform(0.5, 2.2, 10_000))
    m = compute_metrics(est, gt)
    np.testing.assert_allclose(as_tuple(m), brute_force_metrics(est, gt), rtol=1e-12, atol=1e-12)


def test_matching_is_by_id(rng):
    gt = cloud_from_depths([1.0, 2.0, 3.0, 4.0], ids=[10, 11, 12, 13])
    est = cloud_from_depths([3.3, 1.0, 9.0], ids=[12, 10, 99])
    m = compute_metrics(est, gt)
    assert m.n_points == 2
    assert m.abs_diff == pytest.approx(0.15)


@given(
    arrays(np.float64, 20, elements=st.floats(0.1, 50)),
    arrays(np.float64, 20, elements=st.floats(0.1, 50)),
    st.permutations(list(range(20))),
)
def test_properties(e, g, perm):
    est, gt = cloud_from_depths(e), cloud_from_depths(g)
    m = compute_metrics(est, gt)
    assert 0 <= m.delta1 <= m.delta2 <= m.delta3 <= 1 and m.rms >= 0
    # ordering invariance
    perm = np.array(perm)
    shuffled = PointCloud(est.ids[perm], est.points[perm])
    np.testing.assert_allclose(as_tuple(compute_metrics(shuffled, gt)), as_tuple(m), rtol=1e-12)
    # symmetric thresholds
    swapped = compute_metrics(gt, est)
    assert (swapped.delta1, swapped.delta2, swapped.delta3) == (m.delta1, m.delta2, m.delta3)
    assert swapped.abs_diff == pytest.approx(m.abs_diff, rel=1e-12)


def test_errors():
    with pytest.raises(NoMatches):
        compute_metrics(cloud_from_depths([1.0], ids=[1]), cloud_from_depths([1.0], ids=[2]))
    with pytest.raises(ZeroGroundTruthDepth):
        compute_metrics(cloud_from_depths([1.0]), cloud_from_depths([0.0]))
    with pytest.raises(ValidationError):
        compute_metrics(cloud_from_depths([1.0]), cloud_from_depths([1.0]), quantity="volume")


def test_euclidean_quantity():
    est = PointCloud([0], [[3.0, 4.0, 0.0]])
    gt = PointCloud([0], [[0.0, 0.0, 5.0]])
    m = compute_metrics(est, gt, quantity="euclidean")
    assert m.abs_diff == pytest.approx(math.sqrt(9 + 16 + 25))
    assert m.delta1 == 1.0  # both ranges are 5


def test_anchor_frames(rig):
    motion = MotionState.from_rotation_vector((0, 0, 0), (0, 0, 0.9))
    cloud = cloud_from_depths([7.0])
    assert anchor_row(rig, "first") == 0 and anchor_row(rig, "center") == 4
    assert to_anchor(cloud, motion, rig, "first").points[0, 2] == 7.0
    assert to_anchor(cloud, motion, rig, "center").points[0, 2] == pytest.approx(7.0 + 0.9 * 4 / 9)
    with pytest.raises(ValidationError):
        anchor_row(rig, "last")


def test_distortion_summary(rig):
    scene = random_scene(5, seed=0)
    gs = simulate(scene, scenario(0), rig)
    assert distortion_summary(gs, gs)["max"] == 0.0
    slow = distortion_summary(gs, simulate(scene, scenario(1), rig))
    fast = distortion_summary(gs, simulate(scene, scenario(6), rig))
    assert fast["mean"] > slow["mean"] > 0
    with pytest.raises(NoMatches):
        distortion_summary(gs, gs.subset(np.zeros(len(gs), dtype=bool)))


def test_csv_row_and_serialisation():
    m = compute_metrics(cloud_from_depths([1.1]), cloud_from_depths([1.0]))
    row = m.csv_row(scene="s", scenario=3, mode="Full")
    text = metrics_csv([row], ["scene", "scenario", "mode", "abs_rel", "rms", "delta1", "n_points"])
    header, line = text.splitlines()
    assert header == "scene,scenario,mode,abs_rel,rms,delta1,n_points"
    assert float(line.split(",")[3]) == m.abs_rel
    assert m.to_dict()["frame"] == "center"
