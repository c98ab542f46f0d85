"""Board pose in the camera frame from detected inner-corner pixels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .board import BoardFeatures, BoardGeometry, order_corners
from .geometry import CameraIntrinsics, nearest_rotation, project_points, so3_exp

CAMERA_UP = (0.0, -1.0, 0.0)


class PoseEstimationError(ValueError):
    pass


@dataclass(frozen=True)
class CornerObservations:
    pixels: np.ndarray  # (cols*rows, 2), row-major over the grid
    grid: tuple  # (cols, rows)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        cols, rows = (int(g) for g in self.grid)
        if len(px) != cols * rows:
            raise PoseEstimationError(f"expected {cols * rows} corners, got {len(px)}")
        if not np.all(np.isfinite(px)):
            raise PoseEstimationError("non-finite corner coordinates")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "grid", (cols, rows))


def undistort_points(pixels, k: CameraIntrinsics, max_iter: int = 20, tol: float = 1e-10) -> np.ndarray:
    """Pixels (N, 2) to undistorted normalized image coordinates.

    Fixed-point inversion of the radial-tangential model.
    """
    px = np.asarray(getattr(pixels, "pixels", pixels), dtype=float).reshape(-1, 2)
    xd = np.column_stack([(px[:, 0] - k.cx) / k.fx, (px[:, 1] - k.cy) / k.fy])
    if not any(k.distortion):
        return xd
    k1, k2, p1, p2, k3 = k.distortion
    xy = xd.copy()
    for _ in range(max_iter):
        x, y = xy[:, 0], xy[:, 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        new = np.column_stack([(xd[:, 0] - dx) / radial, (xd[:, 1] - dy) / radial])
        step = np.max(np.abs(new - xy))
        xy = new
        if step < tol:
            return xy
    raise PoseEstimationError("distortion inversion failed")


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    scale = np.sqrt(2.0) / np.mean(np.linalg.norm(pts - c, axis=1))
    return np.array([[scale, 0.0, -scale * c[0]], [0.0, scale, -scale * c[1]], [0.0, 0.0, 1.0]])


def homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized DLT homography mapping src (N, 2) onto dst (N, 2)."""
    if len(src) < 4:
        raise PoseEstimationError("degenerate corners: need at least 4 points")
    ts, td = _normalizing_transform(src), _normalizing_transform(dst)
    s = np.column_stack([src, np.ones(len(src))]) @ ts.T
    d = np.column_stack([dst, np.ones(len(dst))]) @ td.T
    zeros = np.zeros((len(s), 3))
    rows_u = np.hstack([s, zeros, -d[:, :1] * s])
    rows_v = np.hstack([zeros, s, -d[:, 1:2] * s])
    a = np.vstack([rows_u, rows_v])
    _, sv, vt = np.linalg.svd(a)
    # a rank-deficient system (collinear points) leaves a multi-dimensional null space
    if sv[7] < 1e-9 * sv[0]:
        raise PoseEstimationError("degenerate corners: collinear or repeated points")
    hn = vt[-1].reshape(3, 3)
    # collinear image points fit exactly, but only with a singular homography
    hs = np.linalg.svd(hn, compute_uv=False)
    if hs[2] < 1e-8 * hs[0]:
        raise PoseEstimationError("degenerate corners: image points are collinear")
    return np.linalg.inv(td) @ hn @ ts


def _pose_from_homography(h: np.ndarray):
    h1, h2, h3 = h[:, 0], h[:, 1], h[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if h3[2] < 0:
        lam = -lam
    r1, r2, t = lam * h1, lam * h2, lam * h3
    rot = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return rot, t


def _refine_pose(rot, t, board_pts, xy, iters: int = 10):
    """Gauss-Newton on normalized-plane reprojection residuals."""
    def residuals(rr, tt):
        pc = board_pts @ rr.T + tt
        return (pc[:, :2] / pc[:, 2:3] - xy).ravel()

    eps = 1e-7
    for _ in range(iters):
        r0 = residuals(rot, t)
        jac = np.empty((len(r0), 6))
        for j in range(6):
            delta = np.zeros(6)
            delta[j] = eps
            jac[:, j] = (residuals(so3_exp(delta[:3]) @ rot, t + delta[3:]) - r0) / eps
        step, *_ = np.linalg.lstsq(jac, -r0, rcond=None)
        rot = so3_exp(step[:3]) @ rot
        t = t + step[3:]
        if np.linalg.norm(step) < 1e-12:
            break
    return rot, t


def estimate_board_pose(obs: CornerObservations, k: CameraIntrinsics, board: BoardGeometry,
                        refine: bool = True) -> BoardFeatures:
    """Board normal, centre and outline corners in the camera frame."""
    if len(obs.pixels) < 4:
        raise PoseEstimationError("degenerate corners: need at least 4 points")
    if tuple(obs.grid) != tuple(board.inner_corners):
        raise PoseEstimationError("corner grid does not match board geometry")
    board_pts = board.grid_points()
    xy = undistort_points(obs.pixels, k)
    h = homography_dlt(board_pts[:, :2], xy)
    rot, t = _pose_from_homography(h)
    if refine:
        rot, t = _refine_pose(rot, t, board_pts, xy)
    depth = board_pts @ rot.T + t
    if np.any(depth[:, 2] <= 0):
        raise PoseEstimationError("cheirality: board behind camera")
    normal = rot[:, 2]
    corners = board.outline() @ rot.T + t
    corners = order_corners(corners, normal if normal @ t < 0 else -normal, np.array(CAMERA_UP))
    return BoardFeatures.from_corners(normal, corners)


def render_corners(k: CameraIntrinsics, board: BoardGeometry, rot: np.ndarray, t) -> np.ndarray:
    """Pixels of the inner-corner grid for a board at pose (rot, t) in the camera frame."""
    return project_points(k, board.grid_points() @ np.asarray(rot).T + np.asarray(t))
