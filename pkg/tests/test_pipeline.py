import logging
import math

import numpy as np
import pytest

from voqcal.board import BoardFeatures
from voqcal.geometry import RigidTransform, Rotation, so3_exp
from voqcal.pipeline import (AggregationCollapsed, CalibrationError, PoseSample, SetResult, aggregate, calibrate,
                             chordal_mean, enumerate_and_score, select_top_k, transform_error)
from voqcal.solver import SetSolution
from voqcal.voq import SetScore

from conftest import random_rotation


def _random_poses(n, seed=0):
    rng = np.random.default_rng(seed)
    poses = []
    for i in range(n):
        nl = rng.normal(size=3)
        nc = rng.normal(size=3)
        corners = rng.normal(size=(4, 3)) + [0, 0, 3]
        poses.append(PoseSample(f"p{i}", BoardFeatures.from_corners(nl, corners),
                                BoardFeatures.from_corners(nc, corners), float(rng.uniform(0, 40))))
    return poses


def _score(indices, v, klc=None):
    klc = v if klc is None else klc
    return SetScore(tuple(indices), klc, klc, klc, v - klc, v)


def _result(indices, rot, t):
    sol = SetSolution(RigidTransform(Rotation(rot), t), 0.0, 0.0)
    return SetResult(tuple(indices), _score(indices, 5.0), sol)


@pytest.mark.parametrize("n, expected", [(3, 1), (10, 120), (50, 19600)])
def test_enumeration_counts(n, expected):
    scores = enumerate_and_score(_random_poses(n))
    assert len(scores) == expected
    assert len({s.indices for s in scores}) == expected
    assert all(i < j < k for i, j, k in (s.indices for s in scores))


def test_enumeration_needs_three_poses():
    with pytest.raises(CalibrationError):
        enumerate_and_score(_random_poses(2))


def test_chunking_does_not_change_scores():
    poses = _random_poses(15, seed=3)
    a = enumerate_and_score(poses, chunk=4096)
    b = enumerate_and_score(poses, chunk=7)
    assert a == b


def test_top_k_takes_lowest():
    scores = enumerate_and_score(_random_poses(50, seed=1))
    top = select_top_k(scores, 50)
    assert len(top) == 50
    finite = sorted(s.voq for s in scores if s.finite)
    assert [s.voq for s in top] == finite[:50]


def test_top_k_larger_than_available_warns(caplog):
    scores = [_score((0, 1, 2), 4.0), _score((0, 1, 3), math.inf)]
    with caplog.at_level(logging.WARNING):
        top = select_top_k(scores, 5)
    assert [s.indices for s in top] == [(0, 1, 2)]
    assert "fewer than k" in caplog.text


def test_top_k_tie_break_is_lexicographic():
    scores = [_score((2, 3, 4), 7.0, 4.0), _score((0, 1, 5), 7.0, 4.0), _score((0, 1, 4), 7.0, 5.0),
              _score((0, 2, 3), 6.0)]
    top = select_top_k(scores, 3)
    assert [s.indices for s in top] == [(0, 2, 3), (0, 1, 5), (2, 3, 4)]
    assert select_top_k(list(reversed(scores)), 3) == top


def test_top_k_prefilter_and_all_infinite():
    scores = [_score((0, 1, 2), 60.0, 55.0), _score((0, 1, 3), 70.0, 12.0)]
    assert [s.indices for s in select_top_k(scores, 5, kappa_prefilter=50.0)] == [(0, 1, 3)]
    with pytest.raises(CalibrationError):
        select_top_k([_score((0, 1, 2), math.inf)], 5)


def test_aggregate_identical_solutions():
    rng = np.random.default_rng(0)
    r, t = random_rotation(rng), rng.normal(size=3)
    results = [_result((i, i + 1, i + 2), r, t) for i in range(50)]
    final, stddev, _, used, rejected, _ = aggregate(results)
    np.testing.assert_array_equal(final.rotation.matrix, Rotation(r).matrix)
    np.testing.assert_array_equal(final.translation, t)
    np.testing.assert_array_equal(stddev, np.zeros(6))
    assert len(used) == 50 and not rejected


def test_aggregate_rejects_gross_outlier_exactly():
    rng = np.random.default_rng(1)
    r, t = random_rotation(rng), rng.normal(size=3)
    results = [_result((i, 60, 61), r, t) for i in range(49)] + [_result((49, 60, 61), r, t + [1.0, 0, 0])]
    final, stddev, _, used, rejected, _ = aggregate(results)
    assert [x.indices for x, _ in rejected] == [(49, 60, 61)]
    np.testing.assert_array_equal(final.rotation.matrix, Rotation(r).matrix)
    np.testing.assert_array_equal(final.translation, t)


def test_aggregate_mean_of_spread_solutions():
    rng = np.random.default_rng(2)
    r = random_rotation(rng)
    ts = rng.normal(0, 0.01, size=(20, 3)) + [0.1, 0.2, 0.3]
    rots = [so3_exp(rng.normal(0, 0.002, 3)) @ r for _ in range(20)]
    results = [_result((i, 30, 31), q, t) for i, (q, t) in enumerate(zip(rots, ts))]
    final, stddev, _, used, _, _ = aggregate(results, z_threshold=10.0)
    np.testing.assert_allclose(final.translation, ts.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(stddev[3:], ts.std(axis=0), atol=1e-12)
    assert math.degrees(final.rotation.angle_to(Rotation(r))) < 0.2


def test_aggregate_wraps_angles():
    # yaw solutions straddle +-180 degrees
    t = np.zeros(3)
    results = [_result((i, 10, 11), so3_exp([0, 0, a]), t) for i, a in enumerate([np.pi - 0.01, -np.pi + 0.01])]
    final, stddev, euler, *_ = aggregate(results)
    assert abs(abs(euler[2]) - 180.0) < 1e-6
    assert stddev[2] == pytest.approx(math.degrees(0.01), rel=1e-6)


def test_aggregate_empty_collapses():
    with pytest.raises(AggregationCollapsed):
        aggregate([])


def test_chordal_mean_of_symmetric_pair():
    a, b = so3_exp([0.1, 0, 0]), so3_exp([-0.1, 0, 0])
    np.testing.assert_allclose(chordal_mean([a, b]), np.eye(3), atol=1e-12)


def test_calibrate_noiseless(clean_scene, clean_samples):
    cal, _ = clean_samples
    report = calibrate(cal, k=20)
    rot, trans = transform_error(report.final, clean_scene.truth)
    assert rot < 1e-6 and trans < 1e-8
    assert len(report.sets_used) + len(report.sets_rejected) == 20


def test_calibrate_stddev_consistent_with_monte_carlo(oracle):
    from voqcal.synthetic import NoiseModel, SceneSpec, generate_scene, process_scene

    o = oracle["noisy_end_to_end"]
    scene = generate_scene(SceneSpec(n_poses=50, seed=3001, noise=NoiseModel(range_sigma=0.01, pixel_sigma=0.5)))
    cal, _ = process_scene(scene)
    report = calibrate(cal, k=50)
    rot, trans = transform_error(report.final, scene.truth)
    assert rot < o["rot_bound_deg"] and trans < o["trans_bound_m"]
    # the reported per-set spread stays within a factor of 3 of its Monte-Carlo average
    ratio = np.asarray(report.stddev) / np.asarray(o["mean_report_stddev"])
    assert np.all(ratio > 1 / 3) and np.all(ratio < 3)


def test_calibrate_workers_identical(clean_samples):
    cal, _ = clean_samples
    a = calibrate(cal, k=10, workers=1)
    b = calibrate(cal, k=10, workers=2)
    np.testing.assert_array_equal(a.final.as_matrix(), b.final.as_matrix())
    assert [r.indices for r in a.sets_used] == [r.indices for r in b.sets_used]
