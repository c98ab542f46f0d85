"""Board feature extraction from lidar pointclouds.

The edge/corner stage reconstructs the usual diamond-board procedure:
plane fit, boundary points, one line per board edge, corners from line
intersections.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull

from .board import BoardFeatures, BoardGeometry, order_corners
from .geometry import as_vec3


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    ring: Optional[np.ndarray] = None
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ExtractionError("pointcloud contains non-finite values")
        object.__setattr__(self, "points", pts)
        for name in ("ring", "intensity"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=int if name == "ring" else float).reshape(-1)
                if len(val) != len(pts):
                    raise ExtractionError(f"{name} length does not match points")
                object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, mask) -> "PointCloud":
        return PointCloud(self.points[mask],
                          None if self.ring is None else self.ring[mask],
                          None if self.intensity is None else self.intensity[mask])

    def transformed(self, rotation, translation) -> "PointCloud":
        return PointCloud(self.points @ np.asarray(rotation).T + as_vec3(translation), self.ring, self.intensity)


@dataclass(frozen=True)
class RoiBox:
    min: tuple
    max: tuple

    def __post_init__(self):
        lo, hi = as_vec3(self.min), as_vec3(self.max)
        if not np.all(lo < hi):
            raise ExtractionError("ROI min must be below max on every axis")
        object.__setattr__(self, "min", tuple(lo))
        object.__setattr__(self, "max", tuple(hi))


@dataclass(frozen=True)
class ExtractionConfig:
    plane_threshold: float = 0.02  # m
    plane_iters: int = 300
    min_inlier_ratio: float = 0.6
    boundary_threshold: float = 0.01  # m, band around the hull for unordered clouds
    line_threshold: float = 0.015  # m
    line_iters: int = 200
    min_edge_angle_deg: float = 10.0
    use_rings: bool = True  # ring extremes when ring indices are present
    up: tuple = (0.0, 0.0, 1.0)


def apply_range_offset(cloud: PointCloud, offset: float) -> PointCloud:
    """Add ``offset`` metres to every point's range; points ending at range <= 0 are dropped."""
    if offset == 0:
        return cloud
    r = np.linalg.norm(cloud.points, axis=1)
    keep = (r > 0) & (r + offset > 0)
    kept = cloud.subset(keep)
    scale = (r[keep] + offset) / r[keep]
    return PointCloud(kept.points * scale[:, None], kept.ring, kept.intensity)


def crop_roi(cloud: PointCloud, roi: RoiBox) -> PointCloud:
    lo, hi = np.asarray(roi.min), np.asarray(roi.max)
    mask = np.all((cloud.points >= lo) & (cloud.points <= hi), axis=1)
    if not np.any(mask):
        raise ExtractionError("no points in ROI")
    return cloud.subset(mask)


def _principal_frame(points: np.ndarray):
    centroid = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return centroid, s, vt


def fit_plane_ransac(cloud: PointCloud, dist_threshold: float, max_iters: int, seed: int,
                     min_inlier_ratio: float = 0.6):
    """RANSAC plane followed by a least-squares refit on the inliers.

    Returns ``(normal, d, inliers)`` with ``normal @ p + d == 0`` on the plane
    and the normal pointing toward the sensor origin.
    """
    pts = cloud.points
    n_pts = len(pts)
    if n_pts < 3:
        raise ExtractionError("degenerate input: fewer than 3 points")
    _, s, _ = _principal_frame(pts)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise ExtractionError("degenerate input: points are collinear")

    rng = np.random.default_rng(seed)
    samples = np.stack([rng.choice(n_pts, size=3, replace=False) for _ in range(max_iters)])
    a, b, c = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    best = None
    if np.any(valid):
        normals = normals[valid] / norms[valid, None]
        ds = -np.sum(normals * a[valid], axis=1)
        counts = np.sum(np.abs(pts @ normals.T + ds) <= dist_threshold, axis=0)
        best = int(np.argmax(counts))  # first maximum wins
    if best is None:
        raise ExtractionError("degenerate input: no valid plane hypotheses")
    inliers = np.abs(pts @ normals[best] + ds[best]) <= dist_threshold

    for _ in range(2):
        centroid, _, vt = _principal_frame(pts[inliers])
        normal = vt[2]
        d = -float(normal @ centroid)
        refined = np.abs(pts @ normal + d) <= dist_threshold
        if refined.sum() < 3:
            break
        inliers = refined
    centroid, _, vt = _principal_frame(pts[inliers])
    normal = vt[2]
    d = -float(normal @ centroid)
    if d < 0:
        # d = -n.c; d > 0 means the normal points back toward the origin
        normal, d = -normal, -d

    if inliers.sum() < min_inlier_ratio * n_pts:
        raise ExtractionError("plane not found: inlier ratio too low")
    return normal, d, np.flatnonzero(inliers)


def _fit_line_ransac(pts2: np.ndarray, threshold: float, iters: int, rng: np.random.Generator):
    """2D line as (point, unit direction) from RANSAC + PCA refit."""
    n = len(pts2)
    if n == 2:
        inliers = np.ones(2, dtype=bool)
    else:
        samples = np.stack([rng.choice(n, size=2, replace=False) for _ in range(iters)])
        p, q = pts2[samples[:, 0]], pts2[samples[:, 1]]
        d = q - p
        lens = np.linalg.norm(d, axis=1)
        ok = lens > 1e-12
        if not np.any(ok):
            raise ExtractionError("insufficient edge points")
        p, d = p[ok], d[ok] / lens[ok, None]
        nrm = np.column_stack([-d[:, 1], d[:, 0]])
        dist = np.abs(np.einsum("ijk,jk->ij", pts2[:, None, :] - p[None, :, :], nrm))
        counts = np.sum(dist <= threshold, axis=0)
        best = int(np.argmax(counts))
        inliers = dist[:, best] <= threshold
        if inliers.sum() < 2:
            inliers = np.zeros(n, dtype=bool)
            inliers[samples[ok][best]] = True
    sel = pts2[inliers]
    centroid = sel.mean(axis=0)
    _, _, vt = np.linalg.svd(sel - centroid)
    return centroid, vt[0]


def _boundary_hull(uv: np.ndarray, threshold: float) -> np.ndarray:
    """Indices of points within ``threshold`` of the 2D convex hull outline."""
    hull = ConvexHull(uv)
    verts = uv[hull.vertices]
    a, b = verts, np.roll(verts, -1, axis=0)
    ab = b - a
    # distance from every point to every hull edge segment
    t = np.einsum("ijk,jk->ij", uv[:, None, :] - a[None], ab) / np.sum(ab * ab, axis=1)
    t = np.clip(t, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    dist = np.linalg.norm(uv[:, None, :] - closest, axis=2).min(axis=1)
    return np.flatnonzero(dist <= threshold)


def _ring_edge_groups(uv: np.ndarray, ring: np.ndarray, up2: np.ndarray) -> list:
    """Edge groups from per-ring extremes, in cyclic order.

    The left (right) extremes of successive rings trace two edges that meet at
    the ring holding the overall leftmost (rightmost) point.
    """
    v_axis = up2 / np.linalg.norm(up2)
    h_axis = np.array([v_axis[1], -v_axis[0]])
    h, v = uv @ h_axis, uv @ v_axis
    left, right = [], []
    for r in np.unique(ring):
        members = np.flatnonzero(ring == r)
        if len(members) < 2:
            continue
        left.append(members[np.argmin(h[members])])
        right.append(members[np.argmax(h[members])])
    groups = []
    for chain, pick in ((np.array(left, dtype=int), np.argmin), (np.array(right, dtype=int), np.argmax)):
        if len(chain) < 3:
            raise ExtractionError("insufficient edge points: too few rings on the board")
        corner = chain[pick(h[chain])]
        upper = chain[v[chain] > v[corner]]
        lower = chain[v[chain] < v[corner]]
        # the extreme point lies on one of the two edges, but we cannot tell
        # which; only lend it to a chain that would otherwise be too short
        if len(upper) < 2:
            upper = np.append(upper, corner)
        if len(lower) < 2:
            lower = np.append(lower, corner)
        groups.append((upper, lower))
    (ul, ll), (ur, lr) = groups
    # cyclic: top-left, top-right, bottom-right, bottom-left
    return [uv[ul], uv[ur], uv[lr], uv[ll]]


def _hull_edge_groups(uv: np.ndarray, threshold: float) -> list:
    """Edge groups from the hull band, split at the rectangle's corners.

    The principal axes of the board points run along its sides, so the
    extreme boundary points along the four diagonal directions of that frame
    are the corners; each edge takes the points between two of them.
    """
    b = uv[_boundary_hull(uv, threshold)]
    if len(b) < 8:
        raise ExtractionError("insufficient edge points")
    diagonals = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]])
    rough = b[np.argmax(b @ diagonals.T, axis=0)]
    centre2 = rough.mean(axis=0)
    corner_ang = np.sort(np.arctan2(rough[:, 1] - centre2[1], rough[:, 0] - centre2[0]))
    pt_ang = np.arctan2(b[:, 1] - centre2[1], b[:, 0] - centre2[0])
    groups = []
    for i in range(4):
        lo = corner_ang[i]
        span = np.mod(corner_ang[(i + 1) % 4] - lo, 2 * np.pi)
        groups.append(b[np.mod(pt_ang - lo, 2 * np.pi) <= span])
    return groups


def extract_board_features(cloud: PointCloud, board: BoardGeometry,
                           cfg: ExtractionConfig = ExtractionConfig(), seed: int = 0) -> BoardFeatures:
    if len(cloud) == 0:
        raise ExtractionError("empty cloud")
    normal, d, inliers = fit_plane_ransac(cloud, cfg.plane_threshold, cfg.plane_iters, seed,
                                          cfg.min_inlier_ratio)
    pts = cloud.points[inliers]
    # project inliers onto the plane
    pts = pts - (pts @ normal + d)[:, None] * normal
    centroid, _, vt = _principal_frame(pts)
    e1 = vt[0]
    e2 = np.cross(normal, e1)
    uv = np.column_stack([(pts - centroid) @ e1, (pts - centroid) @ e2])

    if cfg.use_rings and cloud.ring is not None:
        up = as_vec3(cfg.up)
        up2 = np.array([up @ e1, up @ e2])
        if np.linalg.norm(up2) < 1e-6:
            raise ExtractionError("board plane is perpendicular to the ring axis")
        groups = _ring_edge_groups(uv, cloud.ring[inliers], up2)
    else:
        groups = _hull_edge_groups(uv, cfg.boundary_threshold)

    rng = np.random.default_rng([seed, 1])
    lines = []
    for group in groups:
        if len(group) < 2:
            raise ExtractionError("insufficient edge points")
        lines.append(_fit_line_ransac(group, cfg.line_threshold, cfg.line_iters, rng))

    corners2 = []
    min_angle = np.deg2rad(cfg.min_edge_angle_deg)
    for i in range(4):
        (p1, d1), (p2, d2) = lines[i - 1], lines[i]
        cross = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(cross) < np.sin(min_angle):
            raise ExtractionError("degenerate edges: adjacent edge lines nearly parallel")
        diff = p2 - p1
        s = (diff[0] * d2[1] - diff[1] * d2[0]) / cross
        corners2.append(p1 + s * d1)
    corners2 = np.array(corners2)
    corners = centroid + corners2[:, :1] * e1 + corners2[:, 1:] * e2
    corners = order_corners(corners, normal, as_vec3(cfg.up))
    return BoardFeatures.from_corners(normal, corners)
