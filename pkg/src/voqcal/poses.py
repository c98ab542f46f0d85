"""Turn a pose directory into per-pose features, skipping poses that fail."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from .board import board_dimension_error
from .camera import PoseEstimationError, estimate_board_pose
from .config import Config
from .io import DataError, PoseEntry, read_cloud_csv, read_corners_csv
from .lidar import ExtractionError, apply_range_offset, crop_roi, extract_board_features
from .pipeline import PoseSample, parallel_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoseOutcome:
    pose_id: str
    sample: Optional[PoseSample]
    reason: Optional[str] = None

    # evaluation code reads these two
    @property
    def lidar(self):
        return None if self.sample is None else self.sample.lidar

    @property
    def camera(self):
        return None if self.sample is None else self.sample.camera


class _Extractor:
    def __init__(self, cfg: Config):
        self.cfg = cfg

    def __call__(self, item) -> PoseOutcome:
        index, entry = item
        cfg = self.cfg
        try:
            cloud = read_cloud_csv(entry.cloud_path)
            corners = read_corners_csv(entry.corners_path, cfg.board.inner_corners)
            cloud = apply_range_offset(cloud, cfg.range_offset_m)
            if cfg.roi is not None:
                cloud = crop_roi(cloud, cfg.roi)
            lidar = extract_board_features(cloud, cfg.board, cfg.extraction, seed=cfg.seed + index)
            cam = estimate_board_pose(corners, cfg.intrinsics, cfg.board, refine=cfg.camera_refine)
        except (OSError, DataError, ExtractionError, PoseEstimationError) as exc:
            return PoseOutcome(entry.pose_id, None, f"{type(exc).__name__}: {exc}")
        return PoseOutcome(entry.pose_id, PoseSample(entry.pose_id, lidar, cam,
                                                     board_dimension_error(lidar, cfg.board)))


def extract_poses(entries: list, cfg: Config, workers: int = 1) -> list:
    """One outcome per entry, in input order. The RANSAC seed is ``cfg.seed`` plus
    the entry's position, so results do not depend on the worker count."""
    outcomes = parallel_map(_Extractor(cfg), list(enumerate(entries)), workers)
    for o in outcomes:
        if o.sample is None:
            log.warning("pose %s excluded: %s", o.pose_id, o.reason)
    return outcomes
