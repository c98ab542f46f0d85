"""Variability of Quality: condition numbers of normal matrices plus board error."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import adjugate3, as_mat3, det3, singular_mask

KAPPA_WARN = 50.0


@dataclass(frozen=True)
class PoseSet:
    """Three poses. Normal matrices hold one unit normal per row."""

    indices: tuple
    lidar_normals: np.ndarray
    camera_normals: np.ndarray
    board_errors: tuple  # e_dim per pose, mm
    lidar_centres: Optional[np.ndarray] = None
    camera_centres: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.indices) != 3 or len(set(self.indices)) != 3:
            raise ValueError("a pose set needs 3 distinct poses")
        for name in ("lidar_normals", "camera_normals"):
            m = as_mat3(getattr(self, name))
            if np.any(np.abs(np.linalg.norm(m, axis=1) - 1.0) > 1e-6):
                raise ValueError(f"{name} rows must be unit vectors")
            object.__setattr__(self, name, m)
        if len(self.board_errors) != 3:
            raise ValueError("need one board error per pose")


@dataclass(frozen=True)
class SetScore:
    indices: tuple
    kappa_L: float
    kappa_C: float
    kappa_LC: float
    e_be: float  # mm
    voq: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.voq)

    def sort_key(self):
        return (self.voq, self.kappa_LC, tuple(self.indices))


def condition_numbers(n: np.ndarray) -> np.ndarray:
    """Frobenius condition number of a (..., 3, 3) stack; ``inf`` where singular."""
    n = np.asarray(n, dtype=float)
    sing = singular_mask(n)
    det = np.where(sing, 1.0, det3(n))
    inv = adjugate3(n) / det[..., None, None]
    # one square root of the product keeps kappa(I) at exactly 3
    kappa = np.sqrt(np.sum(n * n, axis=(-2, -1)) * np.sum(inv * inv, axis=(-2, -1)))
    return np.where(sing, np.inf, kappa)


def condition_number(n) -> float:
    """||N||_F * ||N^-1||_F, or ``inf`` for a singular matrix. Minimum is 3."""
    return float(condition_numbers(as_mat3(n)))


def kappa_lc(pose_set: PoseSet) -> float:
    return max(condition_number(pose_set.lidar_normals), condition_number(pose_set.camera_normals))


def average_board_error(pose_set: PoseSet) -> float:
    return float(sum(pose_set.board_errors) / 3.0)


def voq(pose_set: PoseSet, board_weight: float = 1.0) -> SetScore:
    kl = condition_number(pose_set.lidar_normals)
    kc = condition_number(pose_set.camera_normals)
    klc = max(kl, kc)
    e_be = average_board_error(pose_set)
    return SetScore(tuple(pose_set.indices), kl, kc, klc, e_be, klc + board_weight * e_be)


def score_triples(triples: np.ndarray, lidar_normals: np.ndarray, camera_normals: np.ndarray,
                  e_dim: np.ndarray, board_weight: float = 1.0) -> np.ndarray:
    """Vectorized scoring of index triples (M, 3).

    Returns an (M, 5) array of kappa_L, kappa_C, kappa_LC, e_be, voq.
    Each row depends only on its own triple, so chunking does not change results.
    """
    kl = condition_numbers(lidar_normals[triples])
    kc = condition_numbers(camera_normals[triples])
    klc = np.maximum(kl, kc)
    e = e_dim[triples]
    e_be = (e[:, 0] + e[:, 1] + e[:, 2]) / 3.0
    return np.column_stack([kl, kc, klc, e_be, klc + board_weight * e_be])
