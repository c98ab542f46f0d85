"""Camera-to-lidar extrinsics from one set of three board poses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, Rotation, angle_between, singular_mask, so3_exp
from .voq import PoseSet


class DegenerateSetError(ValueError):
    pass


@dataclass(frozen=True)
class SetSolution:
    transform: RigidTransform
    residual_normal_angle: float  # rad, worst pose
    residual_centre: float  # m, worst pose


def solve_rotation(camera_normals, lidar_normals) -> Rotation:
    """Rotation R minimizing ||R N_C^T - N_L^T||_F (orthogonal Procrustes).

    Rows of both matrices are corresponding unit normals.
    """
    nc = np.asarray(camera_normals, dtype=float)
    nl = np.asarray(lidar_normals, dtype=float)
    if singular_mask(nc) or singular_mask(nl):
        raise DegenerateSetError("degenerate normal matrix")
    u, _, vt = np.linalg.svd(nl.T @ nc)
    d = 1.0 if np.linalg.det(u @ vt) >= 0 else -1.0
    return Rotation(u @ np.diag([1.0, 1.0, d]) @ vt)


def solve_rotation_quaternion(camera_normals, lidar_normals) -> Rotation:
    """Same objective solved as the top eigenvector of Horn's 4x4 matrix."""
    m = np.asarray(camera_normals, dtype=float).T @ np.asarray(lidar_normals, dtype=float)
    sxx, sxy, sxz = m[0]
    syx, syy, syz = m[1]
    szx, szy, szz = m[2]
    k = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    w, v = np.linalg.eigh(k)
    return Rotation.from_quaternion(v[:, np.argmax(w)])


def solve_translation(rotation: Rotation, camera_centres, lidar_centres) -> np.ndarray:
    cc = np.asarray(camera_centres, dtype=float)
    cl = np.asarray(lidar_centres, dtype=float)
    return np.mean(cl - rotation.apply(cc), axis=0)


def _residuals(transform: RigidTransform, pose_set: PoseSet):
    rn = transform.rotation.apply(pose_set.camera_normals)
    ang = max(angle_between(a, b) for a, b in zip(rn, pose_set.lidar_normals))
    cen = np.linalg.norm(transform.apply(pose_set.camera_centres) - pose_set.lidar_centres, axis=1)
    return ang, float(cen.max())


def refine_transform(transform: RigidTransform, pose_set: PoseSet, iters: int = 25) -> RigidTransform:
    """Gauss-Newton over 6 DOF on normal angle (rad) and centre distance (m), unit weights."""
    nc, nl = pose_set.camera_normals, pose_set.lidar_normals
    cc, cl = pose_set.camera_centres, pose_set.lidar_centres

    def residuals(rot, t):
        rn = nc @ rot.T
        # angle-scaled axis vector: |r| equals the angle between the normals
        cr = np.cross(rn, nl)
        s = np.linalg.norm(cr, axis=1)
        ang = np.arctan2(s, np.sum(rn * nl, axis=1))
        scale = np.where(s > 1e-15, ang / np.where(s > 1e-15, s, 1.0), 1.0)
        return np.concatenate([(cr * scale[:, None]).ravel(), (cc @ rot.T + t - cl).ravel()])

    rot, t = transform.rotation.matrix.copy(), transform.translation.copy()
    eps = 1e-7
    for _ in range(iters):
        r0 = residuals(rot, t)
        jac = np.empty((len(r0), 6))
        for j in range(6):
            delta = np.zeros(6)
            delta[j] = eps
            jac[:, j] = (residuals(so3_exp(delta[:3]) @ rot, t + delta[3:]) - r0) / eps
        step, *_ = np.linalg.lstsq(jac, -r0, rcond=None)
        cand_rot, cand_t = so3_exp(step[:3]) @ rot, t + step[3:]
        if np.sum(residuals(cand_rot, cand_t) ** 2) > np.sum(r0 ** 2):
            break
        rot, t = cand_rot, cand_t
        if np.linalg.norm(step) < 1e-12:
            break
    return RigidTransform(Rotation(rot), t)


def solve_set(pose_set: PoseSet, refine: bool = False) -> SetSolution:
    if pose_set.camera_centres is None or pose_set.lidar_centres is None:
        raise ValueError("pose set needs board centres to solve translation")
    rot = solve_rotation(pose_set.camera_normals, pose_set.lidar_normals)
    t = solve_translation(rot, pose_set.camera_centres, pose_set.lidar_centres)
    transform = RigidTransform(rot, t)
    if refine:
        transform = refine_transform(transform, pose_set)
    ang, cen = _residuals(transform, pose_set)
    return SetSolution(transform, ang, cen)
