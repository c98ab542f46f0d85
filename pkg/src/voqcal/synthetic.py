"""Synthetic calibration scenes with known extrinsics.

Randomness comes from numpy's PCG64 bit generator seeded with an integer,
which gives identical streams on every platform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .board import BoardGeometry
from .camera import CornerObservations, estimate_board_pose, render_corners
from .geometry import CameraIntrinsics, RigidTransform, Rotation, rpy_to_matrix
from .lidar import ExtractionConfig, PointCloud, apply_range_offset, extract_board_features
from .board import board_dimension_error
from .pipeline import PoseSample, calibrate, transform_error

# camera (x right, y down, z forward) to lidar (x forward, y left, z up)
CAMERA_TO_LIDAR_AXES = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


class SceneError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    range_sigma: float = 0.0  # m
    range_bias: float = 0.0  # m, added to every lidar range
    pixel_sigma: float = 0.0  # px


@dataclass(frozen=True)
class SceneSpec:
    n_poses: int = 20
    n_eval_poses: int = 0
    seed: int = 0
    truth_rpy_deg: tuple = (1.5, -2.0, 3.0)  # applied on top of the axis swap
    truth_translation: tuple = (0.08, -0.12, -0.15)
    noise: NoiseModel = NoiseModel()
    sampling: str = "grid"  # "grid" or "rings"
    grid_spacing: float = 0.03  # m, board-frame lattice incl. the board outline
    n_rings: int = 16
    ring_spacing_deg: float = 2.0
    azimuth_step_deg: float = 0.2
    range_band: tuple = (1.7, 4.5)
    max_tilt_deg: float = 35.0
    roll_jitter_deg: float = 3.0
    parallel: bool = False  # every board shares one orientation (degenerate)
    background: bool = False  # add a floor plane below the board
    intrinsics: CameraIntrinsics = CameraIntrinsics(1000.0, 1000.0, 960.0, 600.0)
    image_size: tuple = (1920, 1200)
    board: BoardGeometry = BoardGeometry()
    max_retries: int = 200

    @property
    def truth(self) -> RigidTransform:
        r = CAMERA_TO_LIDAR_AXES @ rpy_to_matrix(*np.deg2rad(self.truth_rpy_deg))
        return RigidTransform(Rotation(r), np.asarray(self.truth_translation, dtype=float))


@dataclass(frozen=True)
class SyntheticPose:
    pose_id: str
    board_rotation: np.ndarray  # board frame -> camera frame
    board_translation: np.ndarray  # board frame origin in the camera frame
    cloud: PointCloud
    corners: CornerObservations


@dataclass(frozen=True)
class SyntheticScene:
    spec: SceneSpec
    truth: RigidTransform
    poses: list
    eval_poses: list = field(default_factory=list)


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# board x right, y down, z away from the camera -> flipped so the board normal faces the camera
_FACING = np.diag([1.0, -1.0, -1.0])


def board_orientation(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Board-to-camera rotation: diamond roll in the board plane, then pitch/yaw tilt."""
    return _ry(yaw) @ _rx(pitch) @ _FACING @ _rz(roll)


def _board_points_grid(board: BoardGeometry, spacing: float) -> np.ndarray:
    ox, oy, _ = board.grid_centre_offset
    nx = int(math.ceil(board.width / spacing)) + 1
    ny = int(math.ceil(board.height / spacing)) + 1
    xs = ox + np.linspace(-board.width / 2, board.width / 2, nx)
    ys = oy + np.linspace(-board.height / 2, board.height / 2, ny)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])


def _ring_scan(spec: SceneSpec, rot_l: np.ndarray, centre_l: np.ndarray):
    """Ray-cast a VLP-16-like scanner against the board; returns points and ring ids."""
    board = spec.board
    normal = rot_l[:, 2]
    elev = np.deg2rad((np.arange(spec.n_rings) - (spec.n_rings - 1) / 2.0) * spec.ring_spacing_deg)
    bearing = math.atan2(centre_l[1], centre_l[0])
    half = math.asin(min(1.0, 0.6 * math.hypot(board.width, board.height) / np.linalg.norm(centre_l)))
    step = np.deg2rad(spec.azimuth_step_deg)
    az = np.arange(math.floor((bearing - half) / step), math.ceil((bearing + half) / step) + 1) * step
    e, a = np.meshgrid(elev, az, indexing="ij")
    rays = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)
    ring = np.repeat(np.arange(spec.n_rings), len(az))
    denom = rays @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = (centre_l @ normal) / denom
    hit = np.isfinite(dist) & (dist > 0)
    pts = rays[hit] * dist[hit, None]
    local = (pts - centre_l) @ rot_l
    ox, oy, _ = board.grid_centre_offset
    inside = (np.abs(local[:, 0] - ox) <= board.width / 2) & (np.abs(local[:, 1] - oy) <= board.height / 2)
    return pts[inside], ring[hit][inside]


def _add_range_noise(points: np.ndarray, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    r = np.linalg.norm(points, axis=1)
    dr = noise.range_bias + (rng.normal(0.0, noise.range_sigma, len(r)) if noise.range_sigma > 0 else 0.0)
    return points * ((r + dr) / r)[:, None]


def _floor(rng: np.random.Generator, centre_l: np.ndarray) -> np.ndarray:
    xy = rng.uniform(-1.5, 1.5, size=(400, 2)) + centre_l[:2]
    return np.column_stack([xy, np.full(len(xy), centre_l[2] - 1.2)])


def _visible(spec: SceneSpec, rot: np.ndarray, t: np.ndarray, lidar_origin_cam: np.ndarray) -> bool:
    outline = spec.board.outline() @ rot.T + t
    if np.any(outline[:, 2] <= 0.3):
        return False
    px = render_corners(spec.intrinsics, spec.board, rot, t)
    w, h = spec.image_size
    margin = 20.0
    if np.any(~np.isfinite(px)) or np.any(px < margin) or np.any(px[:, 0] > w - margin) \
            or np.any(px[:, 1] > h - margin):
        return False
    if spec.sampling == "rings":
        # every outline corner needs a ring above and below it, or an edge gets clipped
        truth = spec.truth
        ol = outline @ truth.rotation.matrix.T + truth.translation
        elev = np.degrees(np.arctan2(ol[:, 2], np.hypot(ol[:, 0], ol[:, 1])))
        half = (spec.n_rings - 1) / 2.0 * spec.ring_spacing_deg - spec.ring_spacing_deg
        if np.any(np.abs(elev) > half):
            return False
    normal = rot[:, 2]
    # both sensors must see the board's front face at a usable angle
    for origin in (np.zeros(3), lidar_origin_cam):
        view = origin - t
        if abs(normal @ view) < 0.25 * np.linalg.norm(view):
            return False
    return (normal @ (np.zeros(3) - t)) * (normal @ (lidar_origin_cam - t)) > 0


def _make_pose(spec: SceneSpec, pose_id: str, rot: np.ndarray, t: np.ndarray,
               rng: np.random.Generator) -> SyntheticPose:
    truth = spec.truth
    r_cl, t_cl = truth.rotation.matrix, truth.translation
    rot_l = r_cl @ rot
    centre_l = r_cl @ t + t_cl
    if spec.sampling == "grid":
        pts_b = _board_points_grid(spec.board, spec.grid_spacing)
        pts = pts_b @ rot_l.T + centre_l
        ring = None
    elif spec.sampling == "rings":
        pts, ring = _ring_scan(spec, rot_l, centre_l)
        if len(pts) < 10:
            raise SceneError("ring scan missed the board")
    else:
        raise SceneError(f"unknown sampling mode {spec.sampling!r}")
    pts = _add_range_noise(pts, spec.noise, rng)
    if spec.background:
        floor = _add_range_noise(_floor(rng, centre_l), spec.noise, rng)
        pts = np.vstack([pts, floor])
        if ring is not None:
            ring = np.concatenate([ring, np.full(len(floor), -1)])
    px = render_corners(spec.intrinsics, spec.board, rot, t)
    if spec.noise.pixel_sigma > 0:
        px = px + rng.normal(0.0, spec.noise.pixel_sigma, px.shape)
    return SyntheticPose(pose_id, rot, t, PointCloud(pts, ring), CornerObservations(px, spec.board.inner_corners))


def _sample_placement(spec: SceneSpec, rng: np.random.Generator, depth: float, fixed_orientation):
    k = spec.intrinsics
    w, h = spec.image_size
    u = rng.uniform(0.3 * w, 0.7 * w)
    v = rng.uniform(0.3 * h, 0.7 * h)
    ray = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    t = ray * depth
    if fixed_orientation is not None:
        return fixed_orientation, t
    tilt = math.radians(spec.max_tilt_deg)
    pitch = rng.uniform(-tilt, tilt)
    yaw = rng.uniform(-tilt, tilt)
    roll = math.radians(45.0 + rng.uniform(-spec.roll_jitter_deg, spec.roll_jitter_deg))
    return board_orientation(pitch, yaw, roll), t


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    if spec.n_poses < 3:
        raise SceneError("need at least 3 poses")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    truth = spec.truth
    lidar_origin_cam = truth.inverse().translation
    fixed = board_orientation(0.2, -0.3, math.radians(45.0)) if spec.parallel else None
    lo, hi = spec.range_band

    def place(pose_id, depth):
        for _ in range(spec.max_retries):
            rot, t = _sample_placement(spec, rng, depth, fixed)
            if _visible(spec, rot, t, lidar_origin_cam):
                return _make_pose(spec, pose_id, rot, t, rng)
        raise SceneError(f"could not place pose {pose_id} inside the camera frustum")

    poses = [place(f"pose_{i:03d}", rng.uniform(lo, hi)) for i in range(spec.n_poses)]
    depths = np.linspace(lo, hi, spec.n_eval_poses) if spec.n_eval_poses else []
    eval_poses = [place(f"eval_{i:03d}", d) for i, d in enumerate(depths)]
    return SyntheticScene(spec, truth, poses, eval_poses)


@dataclass(frozen=True)
class ProcessingConfig:
    """What the real pipeline needs to turn raw pose data into features."""

    extraction: ExtractionConfig = ExtractionConfig()
    range_offset: float = 0.0
    seed: int = 0
    camera_refine: bool = True


def process_pose(pose: SyntheticPose, spec: SceneSpec, cfg: ProcessingConfig = ProcessingConfig(),
                 index: int = 0) -> PoseSample:
    cloud = apply_range_offset(pose.cloud, cfg.range_offset) if cfg.range_offset else pose.cloud
    lidar = extract_board_features(cloud, spec.board, cfg.extraction, seed=cfg.seed + index)
    cam = estimate_board_pose(pose.corners, spec.intrinsics, spec.board, refine=cfg.camera_refine)
    return PoseSample(pose.pose_id, lidar, cam, board_dimension_error(lidar, spec.board))


def process_scene(scene: SyntheticScene, cfg: ProcessingConfig = ProcessingConfig()):
    cal = [process_pose(p, scene.spec, cfg, i) for i, p in enumerate(scene.poses)]
    ev = [process_pose(p, scene.spec, cfg, 10_000 + i) for i, p in enumerate(scene.eval_poses)]
    return cal, ev


def run_end_to_end(scene: SyntheticScene, cfg: ProcessingConfig = ProcessingConfig(), k: int = 50,
                   refine: bool = False, workers: int = 1):
    """Full pipeline on a scene; returns (report, rotation error deg, translation error m)."""
    poses, _ = process_scene(scene, cfg)
    report = calibrate(poses, k=k, refine=refine, workers=workers)
    rot_err, trans_err = transform_error(report.final, scene.truth)
    return report, rot_err, trans_err


def with_noise(spec: SceneSpec, **kw) -> SceneSpec:
    return replace(spec, noise=replace(spec.noise, **kw))


def scene_spec_from_dict(data: dict) -> SceneSpec:
    """Scene spec from a parsed YAML mapping. ``truth`` holds ``rpy_deg`` and
    ``translation``; ``noise``, ``intrinsics`` and ``board`` are nested blocks."""
    data = dict(data or {})
    kw = {}
    truth = data.pop("truth", None) or {}
    if "rpy_deg" in truth:
        kw["truth_rpy_deg"] = tuple(truth["rpy_deg"])
    if "translation" in truth:
        kw["truth_translation"] = tuple(truth["translation"])
    if "noise" in data:
        kw["noise"] = NoiseModel(**(data.pop("noise") or {}))
    if "intrinsics" in data:
        intr = dict(data.pop("intrinsics"))
        if "distortion" in intr:
            intr["distortion"] = tuple(intr["distortion"])
        kw["intrinsics"] = CameraIntrinsics(**intr)
    if "board" in data:
        b = {k: tuple(v) if isinstance(v, list) else v for k, v in data.pop("board").items()}
        kw["board"] = BoardGeometry(**b)
    for key, val in data.items():
        kw[key] = tuple(val) if isinstance(val, list) else val
    try:
        return SceneSpec(**kw)
    except TypeError as exc:
        raise SceneError(f"bad scene spec: {exc}") from exc


def scene_config(spec: SceneSpec):
    """A run configuration matching the scene's sensors and board."""
    from .config import Config

    return Config(intrinsics=spec.intrinsics, board=spec.board, image_size=tuple(spec.image_size),
                  extraction=ExtractionConfig(use_rings=spec.sampling == "rings"), seed=spec.seed)


def export_scene(scene: SyntheticScene, out_dir, cfg=None) -> None:
    """Write the scene as a pose directory the CLI can ingest, plus
    ``config.yaml`` and ``truth.json``."""
    import json
    from pathlib import Path

    from . import io
    from .config import save_config

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfg or scene_config(scene.spec)
    h = cfg.hash()
    entries = [(p, "calibration") for p in scene.poses] + [(p, "evaluation") for p in scene.eval_poses]
    for pose, _ in entries:
        d = out / pose.pose_id
        d.mkdir(exist_ok=True)
        io.write_cloud_csv(d / "cloud.csv", pose.cloud, h)
        io.write_corners_csv(d / "corners.csv", pose.corners, h)
    io.write_index(out, [(p.pose_id, role) for p, role in entries])
    save_config(cfg, out / "config.yaml")
    truth = scene.truth
    (out / "truth.json").write_text(json.dumps({
        "tool_version": io.__version__,
        "config_hash": h,
        "convention": io.CONVENTION,
        "rotation_matrix": [float(x) for x in truth.rotation.matrix.ravel()],
        "translation_m": [float(x) for x in truth.translation],
        "seed": scene.spec.seed,
    }, indent=2) + "\n")
