"""Score every 3-pose set, solve the best K and aggregate them into one estimate."""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .board import BoardFeatures
from .geometry import RigidTransform, Rotation, nearest_rotation
from .solver import DegenerateSetError, SetSolution, solve_set
from .voq import PoseSet, SetScore, score_triples

log = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    pass


class AggregationCollapsed(CalibrationError):
    pass


@dataclass(frozen=True)
class PoseSample:
    pose_id: str
    lidar: BoardFeatures
    camera: BoardFeatures
    e_dim: float  # mm


@dataclass(frozen=True)
class SetResult:
    indices: tuple
    score: SetScore
    solution: Optional[SetSolution] = None


@dataclass
class CalibrationReport:
    final: RigidTransform
    stddev: np.ndarray  # roll, pitch, yaw (deg); x, y, z (m)
    euler_deg: np.ndarray  # mean roll, pitch, yaw of the surviving sets
    mean_voq: float
    sets_used: list
    sets_rejected: list  # (SetResult, reason)
    config_echo: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map; a process pool when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _stack(poses: Sequence[PoseSample]):
    nl = np.array([p.lidar.normal for p in poses])
    nc = np.array([p.camera.normal for p in poses])
    e = np.array([p.e_dim for p in poses], dtype=float)
    return nl, nc, e


class _ChunkScorer:
    def __init__(self, nl, nc, e, weight):
        self.nl, self.nc, self.e, self.weight = nl, nc, e, weight

    def __call__(self, triples):
        return score_triples(triples, self.nl, self.nc, self.e, self.weight)


def enumerate_and_score(poses: Sequence[PoseSample], board_weight: float = 1.0,
                        workers: int = 1, chunk: int = 4096) -> list:
    """Score all C(n, 3) pose sets, in lexicographic index order."""
    n = len(poses)
    if n < 3:
        raise CalibrationError("need at least 3 poses")
    triples = np.array(list(itertools.combinations(range(n), 3)), dtype=np.intp)
    nl, nc, e = _stack(poses)
    chunks = [triples[i:i + chunk] for i in range(0, len(triples), chunk)]
    table = np.vstack(parallel_map(_ChunkScorer(nl, nc, e, board_weight), chunks, workers))
    return [SetScore(tuple(int(i) for i in tr), *map(float, row)) for tr, row in zip(triples, table)]


def select_top_k(scores: Sequence[SetScore], k: int = 50,
                 kappa_prefilter: Optional[float] = None) -> list:
    """The k lowest-VOQ finite sets, ties broken by kappa_LC then indices."""
    pool = [s for s in scores if s.finite]
    if kappa_prefilter is not None:
        pool = [s for s in pool if s.kappa_LC <= kappa_prefilter]
    if not pool:
        raise AggregationCollapsed("aggregation collapsed: no pose set with a finite VOQ")
    pool.sort(key=SetScore.sort_key)
    if len(pool) < k:
        log.warning("only %d finite-VOQ sets available, fewer than k=%d", len(pool), k)
    return pool[:k]


def make_pose_set(poses: Sequence[PoseSample], indices) -> PoseSet:
    sel = [poses[i] for i in indices]
    return PoseSet(
        tuple(indices),
        np.array([p.lidar.normal for p in sel]),
        np.array([p.camera.normal for p in sel]),
        tuple(p.e_dim for p in sel),
        lidar_centres=np.array([p.lidar.centre for p in sel]),
        camera_centres=np.array([p.camera.centre for p in sel]),
    )


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _shifted_mean(x: np.ndarray, ref: np.ndarray, angular: np.ndarray) -> np.ndarray:
    # mean of deviations from a reference sample; identical samples give the reference exactly
    dev = x - ref
    dev[:, angular] = _wrap(dev[:, angular])
    return ref + dev.mean(axis=0)


def solution_params(sol: SetSolution) -> np.ndarray:
    return np.concatenate([sol.transform.rotation.as_rpy(), sol.transform.translation])


def chordal_mean(rotations: Sequence[np.ndarray]) -> np.ndarray:
    """L2 chordal mean: nearest rotation to the arithmetic mean matrix."""
    stack = np.asarray(rotations, dtype=float)
    if np.all(stack == stack[0]):
        return stack[0].copy()
    return nearest_rotation(stack.mean(axis=0))


def aggregate(results: Sequence[SetResult], z_threshold: float = 2.0):
    """One-pass z-score filter then mean of the survivors.

    Returns ``(final, stddev, euler_mean, used, rejected, warnings)``. Any
    component beyond ``z_threshold`` rejects the whole solution.
    """
    results = sorted((r for r in results if r.solution is not None), key=lambda r: r.indices)
    if not results:
        raise AggregationCollapsed("aggregation collapsed: no solutions")
    warnings = []
    angular = np.array([True, True, True, False, False, False])
    params = np.array([solution_params(r.solution) for r in results])
    ref = params[0]
    mean = _shifted_mean(params, ref, angular)
    dev = params - mean
    dev[:, angular] = _wrap(dev[:, angular])
    std = np.sqrt(np.mean(dev ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, np.abs(dev) / np.where(std > 0, std, 1.0), 0.0)
    keep = np.all(z <= z_threshold, axis=1)
    used = [r for r, k in zip(results, keep) if k]
    rejected = [(r, "z-score") for r, k in zip(results, keep) if not k]
    if not used:
        raise AggregationCollapsed("aggregation collapsed: every solution rejected")

    surv = params[keep]
    if len(used) < 2:
        warnings.append("fewer than 2 surviving sets; returning the survivor without spread")
        log.warning(warnings[-1])
        sol = used[0].solution.transform
        return sol, np.zeros(6), np.rad2deg(surv[0, :3]), used, rejected, warnings

    mean = _shifted_mean(surv, surv[0], angular)
    dev = surv - mean
    dev[:, angular] = _wrap(dev[:, angular])
    std = np.sqrt(np.mean(dev ** 2, axis=0))
    rot = chordal_mean([r.solution.transform.rotation.matrix for r in used])
    final = RigidTransform(Rotation(rot), mean[3:])
    stddev = np.concatenate([np.rad2deg(std[:3]), std[3:]])
    return final, stddev, np.rad2deg(_wrap(mean[:3])), used, rejected, warnings


class _SetSolver:
    def __init__(self, poses, refine):
        self.poses, self.refine = poses, refine

    def __call__(self, score: SetScore):
        try:
            return solve_set(make_pose_set(self.poses, score.indices), refine=self.refine)
        except DegenerateSetError as exc:
            return str(exc)


def calibrate(poses: Sequence[PoseSample], k: int = 50, board_weight: float = 1.0,
              kappa_prefilter: Optional[float] = None, kappa_warn: float = 50.0,
              z_threshold: float = 2.0, refine: bool = False, workers: int = 1,
              scores: Optional[list] = None) -> CalibrationReport:
    if scores is None:
        scores = enumerate_and_score(poses, board_weight, workers)
    top = select_top_k(scores, k, kappa_prefilter)
    warnings = []
    if len(top) < k:
        warnings.append(f"only {len(top)} finite-VOQ sets available (k={k})")
    outcomes = parallel_map(_SetSolver(list(poses), refine), top, workers)
    solved, failed = [], []
    for score, out in zip(top, outcomes):
        if isinstance(out, SetSolution):
            solved.append(SetResult(score.indices, score, out))
        else:
            failed.append((SetResult(score.indices, score, None), out))
    final, stddev, euler, used, rejected, agg_warn = aggregate(solved, z_threshold)
    warnings += agg_warn
    n_unstable = sum(1 for s in top if s.kappa_LC >= kappa_warn)
    if n_unstable:
        warnings.append(f"{n_unstable} selected sets have kappa_LC >= {kappa_warn:g}")
    rank = {s.indices: i for i, s in enumerate(top)}
    used.sort(key=lambda r: rank[r.indices])
    rejected = sorted(rejected + failed, key=lambda rr: rank[rr[0].indices])
    mean_voq = float(np.mean([s.voq for s in top]))
    return CalibrationReport(final, stddev, euler, mean_voq, used, rejected, warnings=warnings)


def transform_error(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """(rotation geodesic error in degrees, translation error in metres)."""
    rot = math.degrees(estimate.rotation.angle_to(truth.rotation))
    return rot, float(np.linalg.norm(estimate.translation - truth.translation))
