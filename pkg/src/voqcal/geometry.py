"""Rotations, rigid transforms, pinhole projection and small 3x3 helpers.

Vectors are plain ``numpy`` arrays of shape (3,); matrices are (3, 3).
Transforms map camera coordinates into the lidar frame::

    p_lidar = R @ p_camera + t

Euler angles are intrinsic Z-Y-X (yaw, then pitch, then roll), radians.
Quaternions are ordered (w, x, y, z) with w >= 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ORTHO_TOL = 1e-12
SINGULAR_RTOL = 1e-12


class GeometryError(ValueError):
    pass


def as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise GeometryError("non-finite vector")
    return a


def as_mat3(m) -> np.ndarray:
    a = np.asarray(m, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(a)):
        raise GeometryError("non-finite matrix")
    return a


# --- polar coordinates ---

def to_polar(p) -> tuple[float, float, float]:
    """Return (range, azimuth, elevation) of a point; azimuth is 0 on the poles."""
    x, y, z = as_vec3(p)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        raise GeometryError("degenerate point")
    rho = math.hypot(x, y)
    azimuth = math.atan2(y, x) if rho > 0.0 else 0.0
    elevation = math.atan2(z, rho)
    return r, azimuth, elevation


def from_polar(r: float, azimuth: float, elevation: float) -> np.ndarray:
    if not r > 0.0:
        raise GeometryError("range must be positive")
    ce = math.cos(elevation)
    return np.array([r * ce * math.cos(azimuth), r * ce * math.sin(azimuth), r * math.sin(elevation)])


# --- 3x3 helpers ---

def frobenius_norm(m) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(m, dtype=float)))))


def det3(m: np.ndarray) -> np.ndarray:
    """Determinant by cofactor expansion; works on (..., 3, 3) stacks."""
    return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
            - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
            + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]))


def adjugate3(m: np.ndarray) -> np.ndarray:
    """Adjugate (transposed cofactor matrix) of a (..., 3, 3) stack."""
    a = np.empty_like(m)
    a[..., 0, 0] = m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1]
    a[..., 0, 1] = m[..., 0, 2] * m[..., 2, 1] - m[..., 0, 1] * m[..., 2, 2]
    a[..., 0, 2] = m[..., 0, 1] * m[..., 1, 2] - m[..., 0, 2] * m[..., 1, 1]
    a[..., 1, 0] = m[..., 1, 2] * m[..., 2, 0] - m[..., 1, 0] * m[..., 2, 2]
    a[..., 1, 1] = m[..., 0, 0] * m[..., 2, 2] - m[..., 0, 2] * m[..., 2, 0]
    a[..., 1, 2] = m[..., 0, 2] * m[..., 1, 0] - m[..., 0, 0] * m[..., 1, 2]
    a[..., 2, 0] = m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]
    a[..., 2, 1] = m[..., 0, 1] * m[..., 2, 0] - m[..., 0, 0] * m[..., 2, 1]
    a[..., 2, 2] = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return a


def singular_mask(m: np.ndarray) -> np.ndarray:
    """True where |det| < 1e-12 * ||m||_F**3 (scale-free singularity test)."""
    fro = np.sqrt(np.sum(np.square(m), axis=(-2, -1)))
    return ~(np.abs(det3(m)) > SINGULAR_RTOL * fro ** 3)


def invert3(m) -> Optional[np.ndarray]:
    """Inverse of a 3x3 matrix, or ``None`` when it is singular."""
    m = as_mat3(m)
    if singular_mask(m):
        return None
    return adjugate3(m) / det3(m)


# --- rotations ---

def nearest_rotation(m) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (Frobenius-nearest, via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def matrix_to_rpy(r: np.ndarray) -> tuple[float, float, float]:
    sp = -r[2, 0]
    cp = math.hypot(r[0, 0], r[1, 0])
    pitch = math.atan2(sp, cp)
    if cp > 1e-9:
        roll = math.atan2(r[2, 1], r[2, 2])
        yaw = math.atan2(r[1, 0], r[0, 0])
    else:
        # gimbal lock: fold everything into yaw
        roll = 0.0
        yaw = math.atan2(-r[0, 1], r[1, 1])
    return roll, pitch, yaw


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quaternion(r: np.ndarray) -> np.ndarray:
    # Shepperd's method: branch on the largest diagonal term
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def hat(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    k = hat(w)
    if th < 1e-8:
        return np.eye(3) + k + 0.5 * (k @ k)
    return np.eye(3) + (math.sin(th) / th) * k + ((1.0 - math.cos(th)) / (th * th)) * (k @ k)


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    # arccos loses precision near 0, so use atan2(|axis*sin|, cos)
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    c = 0.5 * (np.trace(r) - 1.0)
    return float(math.atan2(s, c))


def angle_between(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(math.atan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


@dataclass(frozen=True)
class Rotation:
    """Proper rotation; the constructor re-orthonormalizes input that is not already orthonormal."""

    matrix: np.ndarray

    def __post_init__(self):
        m = as_mat3(self.matrix).copy()
        # already-orthonormal input is kept bit for bit, so wrapping is idempotent
        if np.max(np.abs(m.T @ m - np.eye(3))) > ORTHO_TOL or np.linalg.det(m) <= 0:
            m = nearest_rotation(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def from_rpy(cls, roll: float, pitch: float, yaw: float) -> "Rotation":
        return cls(rpy_to_matrix(roll, pitch, yaw))

    @classmethod
    def from_quaternion(cls, q) -> "Rotation":
        return cls(quaternion_to_matrix(q))

    @classmethod
    def from_rotvec(cls, w) -> "Rotation":
        return cls(so3_exp(w))

    def as_rpy(self) -> tuple[float, float, float]:
        return matrix_to_rpy(self.matrix)

    def as_quaternion(self) -> np.ndarray:
        return matrix_to_quaternion(self.matrix)

    def apply(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.matrix.T

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.matrix @ other.matrix)

    def angle_to(self, other: "Rotation") -> float:
        return rotation_angle(self.matrix.T @ other.matrix)


@dataclass(frozen=True)
class RigidTransform:
    """Camera to lidar: ``p_lidar = rotation.apply(p_camera) + translation``."""

    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = as_vec3(self.translation).copy()
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(Rotation(m[:3, :3]), m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, p) -> np.ndarray:
        return self.rotation.apply(p) + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.matrix.T
        return RigidTransform(Rotation(rt), -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` after ``other``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation.apply(other.translation) + self.translation)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    distortion: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)  # k1, k2, p1, p2, k3 (OpenCV order)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        d = tuple(float(x) for x in self.distortion)
        if len(d) != 5:
            raise GeometryError("distortion needs 5 coefficients")
        object.__setattr__(self, "distortion", d)

    @property
    def f_mean(self) -> float:
        return 0.5 * (self.fx + self.fy)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def distort(self, xy: np.ndarray) -> np.ndarray:
        """Apply radial-tangential distortion to normalized coordinates (N, 2)."""
        k1, k2, p1, p2, k3 = self.distortion
        xy = np.asarray(xy, dtype=float)
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        return np.stack([xd, yd], axis=-1)

    def normalized_to_pixel(self, xy: np.ndarray) -> np.ndarray:
        d = self.distort(xy)
        return np.stack([self.fx * d[..., 0] + self.cx, self.fy * d[..., 1] + self.cy], axis=-1)


def project_points(k: CameraIntrinsics, p_camera: np.ndarray) -> np.ndarray:
    """Project camera-frame points (N, 3) to pixels; rows with z <= 0 are NaN."""
    p = np.atleast_2d(np.asarray(p_camera, dtype=float))
    z = p[:, 2]
    front = z > 0
    out = np.full((len(p), 2), np.nan)
    if np.any(front):
        out[front] = k.normalized_to_pixel(p[front, :2] / z[front, None])
    return out


def project_to_pixel(t: RigidTransform, k: CameraIntrinsics, p_lidar) -> Optional[tuple[float, float]]:
    """Pixel of a lidar-frame point, or ``None`` when it is behind the camera."""
    p_cam = t.inverse().apply(as_vec3(p_lidar))
    if p_cam[2] <= 0:
        return None
    u, v = project_points(k, p_cam[None, :])[0]
    return float(u), float(v)
