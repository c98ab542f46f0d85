"""Camera-lidar extrinsic calibration with VOQ-based pose-set selection."""

__version__ = "0.1.0"
