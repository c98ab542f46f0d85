"""Scene-wide reprojection error and projected-pointcloud images."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .board import BoardFeatures
from .geometry import CameraIntrinsics, RigidTransform, project_points


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class PoseError:
    pose_id: str
    pixel_error: float  # px, board centre
    metric_error: float  # cm
    corner_pixel_error: float  # px, mean over the 4 outline corners


@dataclass
class ReprojectionStats:
    per_pose: list
    mean_px: float
    std_px: float
    mean_cm: float
    std_cm: float
    mean_corner_px: float
    excluded: list = field(default_factory=list)  # (pose_id, reason)


def reproject_pose_error(t: RigidTransform, k: CameraIntrinsics, lidar_feat: BoardFeatures,
                         cam_feat: BoardFeatures, pose_id: str = "") -> PoseError:
    """Lidar board centre projected through ``t`` versus the camera's own board centre.

    The metric error scales the pixel error by depth / mean focal length.
    """
    to_cam = t.inverse()
    lidar_in_cam = to_cam.apply(np.vstack([lidar_feat.centre, lidar_feat.corners]))
    cam_pts = np.vstack([cam_feat.centre, cam_feat.corners])
    if np.any(lidar_in_cam[:, 2] <= 0) or np.any(cam_pts[:, 2] <= 0):
        raise EvaluationError("behind camera")
    uv_l = project_points(k, lidar_in_cam)
    uv_c = project_points(k, cam_pts)
    err = np.linalg.norm(uv_l - uv_c, axis=1)
    px = float(err[0])
    cm = px * float(cam_feat.centre[2]) / k.f_mean * 100.0
    return PoseError(pose_id, px, cm, float(err[1:].mean()))


def evaluate_scene(t: RigidTransform, k: CameraIntrinsics, eval_poses: Sequence) -> ReprojectionStats:
    """``eval_poses`` items expose ``pose_id``, ``lidar`` and ``camera`` features.

    A ``None`` in place of either feature marks a pose whose data could not be read.
    """
    per_pose, excluded = [], []
    for p in eval_poses:
        if p.lidar is None or p.camera is None:
            excluded.append((p.pose_id, getattr(p, "reason", None) or "missing features"))
            continue
        try:
            per_pose.append(reproject_pose_error(t, k, p.lidar, p.camera, p.pose_id))
        except EvaluationError as exc:
            excluded.append((p.pose_id, str(exc)))
    if not per_pose:
        raise EvaluationError("every evaluation pose was excluded")
    px = np.array([e.pixel_error for e in per_pose])
    cm = np.array([e.metric_error for e in per_pose])
    return ReprojectionStats(per_pose, float(px.mean()), float(px.std()), float(cm.mean()),
                             float(cm.std()), float(np.mean([e.corner_pixel_error for e in per_pose])),
                             excluded)


def centre_pixel_errors(t: RigidTransform, k: CameraIntrinsics, lidar_centres: np.ndarray,
                        camera_pixels: np.ndarray) -> np.ndarray:
    """Batch form of the centre error: lidar centres (N, 3) against precomputed
    camera-centre pixels (N, 2). Points behind the camera give NaN."""
    p_cam = (np.asarray(lidar_centres) - t.translation) @ t.rotation.matrix
    return np.linalg.norm(project_points(k, p_cam) - camera_pixels, axis=1)


def depth_colour(z: np.ndarray, near: float = 3.0, far: float = 20.0) -> np.ndarray:
    """Linear red (near) to blue (far) ramp, clamped; uint8 (N, 3)."""
    a = np.clip((np.asarray(z, dtype=float) - near) / (far - near), 0.0, 1.0)
    return np.column_stack([np.rint(255 * (1 - a)), np.zeros_like(a), np.rint(255 * a)]).astype(np.uint8)


def render_projection(t: RigidTransform, k: CameraIntrinsics, points: np.ndarray, image_size,
                      depth_range=(3.0, 20.0), background: Optional[np.ndarray] = None,
                      radius: int = 2) -> np.ndarray:
    """Draw lidar points (N, 3) into an (H, W, 3) uint8 image, coloured by camera depth.

    Each disc pixel keeps the colour of the nearest point covering it.
    """
    width, height = (int(s) for s in image_size)
    if background is None:
        img = np.zeros((height, width, 3), dtype=np.uint8)
    else:
        img = np.array(background, dtype=np.uint8).reshape(height, width, 3).copy()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return img
    p_cam = t.inverse().apply(pts)
    front = p_cam[:, 2] > 0
    p_cam = p_cam[front]
    uv = project_points(k, p_cam)
    inside = (uv[:, 0] > -radius - 0.5) & (uv[:, 0] < width + radius - 0.5) & \
             (uv[:, 1] > -radius - 0.5) & (uv[:, 1] < height + radius - 0.5)
    uv, z = uv[inside], p_cam[inside, 2]
    colours = depth_colour(z, *depth_range)
    offs = np.array([(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
                     if dx * dx + dy * dy <= radius * radius])
    centre = np.rint(uv).astype(np.int64)
    xs = (centre[:, None, 0] + offs[None, :, 0]).ravel()
    ys = (centre[:, None, 1] + offs[None, :, 1]).ravel()
    owner = np.repeat(np.arange(len(z)), len(offs))
    ok = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    xs, ys, owner = xs[ok], ys[ok], owner[ok]
    # z-buffer: nearest point wins each pixel, ties to the lower point index
    pix = ys * width + xs
    order = np.lexsort((owner, z[owner], pix))
    pix, owner = pix[order], owner[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    img.reshape(-1, 3)[pix[first]] = colours[owner[first]]
    return img
