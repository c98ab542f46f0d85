"""Acceptance checks. Each test prints one "[criterion N] PASS/FAIL" line."""
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import DATA, random_rotation, record
from voqcal.board import BoardFeatures, board_dimension_error
from voqcal.cli import main
from voqcal.evaluation import centre_pixel_errors
from voqcal.geometry import RigidTransform, Rotation, project_points
from voqcal.lidar import ExtractionConfig, apply_range_offset, extract_board_features
from voqcal.pipeline import (PoseSample, SetResult, aggregate, calibrate, enumerate_and_score, make_pose_set,
                             transform_error)
from voqcal.solver import DegenerateSetError, SetSolution, solve_set
from voqcal.synthetic import NoiseModel, ProcessingConfig, SceneSpec, generate_scene, process_scene
from voqcal.voq import SetScore, condition_number, condition_numbers

pytestmark = pytest.mark.slow

NOISY = NoiseModel(range_sigma=0.01, pixel_sigma=0.5)
RINGS = ProcessingConfig(extraction=ExtractionConfig(use_rings=True))
RING_BAND = (2.5, 5.0)


def _solve_all(cal, scores):
    out = []
    for s in scores:
        try:
            out.append((s, solve_set(make_pose_set(cal, s.indices))))
        except DegenerateSetError:
            pass
    return out


def test_criterion_1_combinatorics():
    rng = np.random.default_rng(1)
    poses = []
    for i in range(50):
        corners = rng.normal(size=(4, 3)) + [0, 0, 3]
        poses.append(PoseSample(f"p{i}", BoardFeatures.from_corners(rng.normal(size=3), corners),
                                BoardFeatures.from_corners(rng.normal(size=3), corners), float(rng.uniform(0, 30))))
    t0 = time.perf_counter()
    scores = enumerate_and_score(poses)
    dt = time.perf_counter() - t0
    ok = len(scores) == 19600 == len({s.indices for s in scores}) and dt < 10.0
    assert record(1, ok, f"{len(scores)} sets scored in {dt:.2f} s (limit 10 s)")


def test_criterion_2_runtime_budget(tmp_path):
    data = tmp_path / "fixture"
    assert main(["simulate", "--spec", str(DATA / "fixture50.yaml"), "--out", str(data)]) == 0
    t0 = time.perf_counter()
    code = main(["calibrate", "--config", str(data / "config.yaml"), "--data", str(data), "--out", str(tmp_path)])
    dt = time.perf_counter() - t0
    est = json.loads((tmp_path / "calibration.json").read_text()) if code == 0 else {}
    ok = code == 0 and dt < 90.0 and len(est.get("sets", [])) == 50
    assert record(2, ok, f"calibrate on the 50-pose fixture: exit {code}, {dt:.1f} s (limit 90 s)")


def test_criterion_3_noiseless_exactness():
    t0 = time.perf_counter()
    scene = generate_scene(SceneSpec(n_poses=20, seed=3003))
    cal, _ = process_scene(scene)
    report = calibrate(cal, k=50)
    rot, trans = transform_error(report.final, scene.truth)
    dt = time.perf_counter() - t0
    ok = rot < 1e-6 and trans < 1e-8 and dt < 30.0
    assert record(3, ok, f"rotation {rot:.2e} deg, translation {trans:.2e} m, {dt:.1f} s")


def test_criterion_4_noisy_recovery(oracle):
    o = oracle["noisy_end_to_end"]
    scene = generate_scene(SceneSpec(n_poses=50, seed=4004, noise=NOISY))
    cal, _ = process_scene(scene)
    t0 = time.perf_counter()
    report = calibrate(cal, k=50)
    dt = time.perf_counter() - t0
    rot, trans = transform_error(report.final, scene.truth)
    ok = rot < o["rot_bound_deg"] and trans < o["trans_bound_m"] and dt < 300.0
    assert record(4, ok, f"rotation {rot:.3f} < {o['rot_bound_deg']:.3f} deg, translation {trans * 1000:.1f} < "
                         f"{o['trans_bound_m'] * 1000:.1f} mm, {dt:.1f} s")


def test_criterion_5_voq_stability():
    per_component = rss = 0
    details = []
    for seed in range(100, 110):
        spec = SceneSpec(n_poses=30, seed=seed, sampling="rings", range_band=RING_BAND, noise=NOISY)
        cal, _ = process_scene(generate_scene(spec), RINGS)
        scores = [s for s in enumerate_and_score(cal) if s.kappa_LC < 10 or s.kappa_LC > 100]
        low, high = [], []
        for s, sol in _solve_all(cal, scores):
            (low if s.kappa_LC < 10 else high).append(sol.transform.translation)
        sl, sh = np.std(low, axis=0), np.std(high, axis=0)
        per_component += bool(np.all(sl < sh))
        rss += bool(np.linalg.norm(sl) < np.linalg.norm(sh))
        details.append(f"{len(low)}/{len(high)}")
    ok = per_component >= 9
    assert record(5, ok, f"per-component stddev smaller for kappa<10 in {per_component}/10 seeds "
                         f"(RSS {rss}/10), sets low/high {' '.join(details)}")


def test_criterion_6_voq_reprojection():
    wins = 0
    for seed in range(200, 210):
        spec = SceneSpec(n_poses=50, n_eval_poses=46, seed=seed, sampling="rings", range_band=RING_BAND, noise=NOISY)
        cal, ev = process_scene(generate_scene(spec), RINGS)
        lc = np.array([e.lidar.centre for e in ev])
        cp = project_points(spec.intrinsics, np.array([e.camera.centre for e in ev]))
        scores = sorted((s for s in enumerate_and_score(cal) if s.finite), key=lambda s: s.sort_key())
        n = len(scores) // 10

        def mean_error(group):
            return np.mean([np.mean(centre_pixel_errors(sol.transform, spec.intrinsics, lc, cp))
                            for _, sol in _solve_all(cal, group)])

        wins += bool(mean_error(scores[:n]) < mean_error(scores[-n:]))
    assert record(6, wins == 10, f"bottom-decile VOQ sets reproject better in {wins}/10 seeds")


def test_criterion_7_bias_correction():
    cfg = ExtractionConfig(use_rings=False)

    def mean_edim(bias, offset):
        vals = []
        for seed in (700, 701, 702):
            spec = SceneSpec(n_poses=20, seed=seed, noise=NoiseModel(range_sigma=0.01, range_bias=bias))
            for i, p in enumerate(generate_scene(spec).poses):
                f = extract_board_features(apply_range_offset(p.cloud, offset), spec.board, cfg, seed=i)
                vals.append(board_dimension_error(f, spec.board))
        return float(np.mean(vals))

    base, biased, fixed = mean_edim(0.0, 0.0), mean_edim(-0.03, 0.0), mean_edim(-0.03, 0.03)
    margin = 5.0  # mm, several times the standard error of the baseline mean
    ok = biased - base > margin and abs(fixed - base) < 2.0
    assert record(7, ok, f"mean e_dim {base:.2f} mm, biased {biased:.2f} mm (+{biased - base:.2f}, margin {margin}), "
                         f"offset-corrected {fixed:.2f} mm")


def test_criterion_8_z_score_filter():
    rng = np.random.default_rng(8)
    r, t = Rotation(random_rotation(rng)), rng.normal(size=3)

    def result(i, tt):
        return SetResult((i, 60, 61), SetScore((i, 60, 61), 5.0, 5.0, 5.0, 0.0, 5.0),
                         SetSolution(RigidTransform(r, tt), 0.0, 0.0))

    results = [result(i, t) for i in range(49)] + [result(49, t + [1.0, 0.0, 0.0])]
    final, _, _, used, rejected, _ = aggregate(results)
    ok = ([x.indices for x, _ in rejected] == [(49, 60, 61)] and len(used) == 49
          and np.array_equal(final.rotation.matrix, r.matrix) and np.array_equal(final.translation, t))
    assert record(8, ok, f"rejected {len(rejected)} set(s), final equals the common solution exactly: {ok}")


def test_criterion_9_condition_number():
    k_identity = condition_number(np.eye(3))
    rng = np.random.default_rng(9)
    ms = rng.normal(size=(200, 3, 3))
    alphas = rng.uniform(1e-3, 1e3, 200)
    base = condition_numbers(ms)
    scaled = condition_numbers(ms * alphas[:, None, None])
    scale_dev = float(np.max(np.abs(scaled - base) / base))
    eps = np.geomspace(1.0, 1e-7, 30)
    fam = []
    for e in eps:
        n = np.array([[e, 0, 1], [0, e, 1], [-e, -e, 1]], dtype=float)
        fam.append(condition_number(n / np.linalg.norm(n, axis=1, keepdims=True)))
    flat = condition_number(np.array([[0, 0, 1.0]] * 3))
    # strictly increasing while finite; once the determinant test flags the set singular it stays infinite
    finite = [k for k in fam if math.isfinite(k)]
    monotone = (all(b > a for a, b in zip(finite, finite[1:])) and len(finite) > 10
                and all(math.isinf(k) for k in fam[len(finite):]) and fam[: len(finite)] == finite)
    ok = k_identity == 3.0 and scale_dev < 1e-9 and monotone and math.isinf(flat)
    assert record(9, ok, f"kappa(I) = {k_identity!r}, scale deviation {scale_dev:.1e}, parallel family monotone "
                         f"{monotone} (last finite {finite[-1]:.2e}), exactly parallel gives {flat}")


def test_criterion_10_determinism(tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text("n_poses: 15\nseed: 1010\nnoise: {range_sigma: 0.01, pixel_sigma: 0.5}\n")
    data = tmp_path / "scene"
    assert main(["simulate", "--spec", str(spec), "--out", str(data)]) == 0
    args = ["calibrate", "--config", str(data / "config.yaml"), "--data", str(data), "--seed", "7"]
    codes = [main(args + ["--workers", str(w), "--out", str(tmp_path / f"w{w}")]) for w in (1, 2)]
    a, b = ((tmp_path / f"w{w}" / "calibration.json").read_bytes() for w in (1, 2))
    ok = codes == [0, 0] and a == b
    assert record(10, ok, f"calibration.json byte-identical for 1 and 2 workers: {a == b}")


@pytest.mark.skipif(not os.environ.get("VOQCAL_PAPER_DATA"),
                    reason="set VOQCAL_PAPER_DATA to a converted copy of the authors' released dataset")
def test_criterion_11_paper_data(tmp_path):
    data = Path(os.environ["VOQCAL_PAPER_DATA"])
    cfg = str(data / "config.yaml")
    assert main(["calibrate", "--config", cfg, "--data", str(data), "--out", str(tmp_path)]) == 0
    assert main(["evaluate", "--config", cfg, "--data", str(data), "--calibration",
                 str(tmp_path / "calibration.json"), "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    ok = 0.5 <= s["mean_cm"] <= 1.7 and 0.0 <= s["std_cm"] <= 1.1
    assert record(11, ok, f"mean {s['mean_cm']:.2f} cm (1.0-1.2 +-0.5), std {s['std_cm']:.2f} cm (0.4-0.6 +-0.5)")
