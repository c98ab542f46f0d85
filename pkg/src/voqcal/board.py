"""Board geometry and extracted board features shared by both sensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, as_vec3


@dataclass(frozen=True)
class BoardGeometry:
    """Physical chessboard. Board frame: origin at the inner-grid centre,
    x along ``width`` (grid columns), y along ``height`` (grid rows)."""

    width: float = 0.610
    height: float = 0.850
    square_size: float = 0.095
    inner_corners: tuple = (7, 5)  # (cols, rows)
    grid_centre_offset: tuple = (0.0, 0.0, 0.0)  # board centre in board frame

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.square_size > 0):
            raise GeometryError("board dimensions must be positive")
        cols, rows = (int(x) for x in self.inner_corners)
        if cols < 2 or rows < 2:
            raise GeometryError("need at least a 2x2 inner-corner grid")
        if (cols - 1) * self.square_size > self.width or (rows - 1) * self.square_size > self.height:
            raise GeometryError("inner-corner grid does not fit on the board")
        object.__setattr__(self, "inner_corners", (cols, rows))
        object.__setattr__(self, "grid_centre_offset", tuple(float(v) for v in as_vec3(self.grid_centre_offset)))

    def grid_points(self) -> np.ndarray:
        """Inner corners in the board frame, row-major (columns vary fastest)."""
        cols, rows = self.inner_corners
        s = self.square_size
        xs = (np.arange(cols) - (cols - 1) / 2.0) * s
        ys = (np.arange(rows) - (rows - 1) / 2.0) * s
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(cols * rows)])

    def outline(self) -> np.ndarray:
        """The 4 physical board corners in the board frame, going around the rectangle."""
        ox, oy, oz = self.grid_centre_offset
        hw, hh = self.width / 2.0, self.height / 2.0
        return np.array([[ox + hw, oy + hh, oz], [ox + hw, oy - hh, oz],
                         [ox - hw, oy - hh, oz], [ox - hw, oy + hh, oz]])

    def edge_lengths_mm(self, start_with_width: bool) -> np.ndarray:
        a, b = self.width * 1e3, self.height * 1e3
        return np.array([a, b, a, b] if start_with_width else [b, a, b, a])


@dataclass(frozen=True)
class BoardFeatures:
    """Board seen by one sensor, in that sensor's frame.

    ``corners`` are ordered [top, right, bottom, left] as seen from the
    sensor; ``edge_lengths`` follow as [top-right, bottom-right,
    bottom-left, top-left] in metres.
    """

    normal: np.ndarray
    centre: np.ndarray
    corners: np.ndarray
    edge_lengths: np.ndarray

    @classmethod
    def from_corners(cls, normal, corners) -> "BoardFeatures":
        corners = np.asarray(corners, dtype=float).reshape(4, 3)
        n = as_vec3(normal)
        n = n / np.linalg.norm(n)
        centre = corners.mean(axis=0)
        if np.dot(n, centre) > 0:
            n = -n
        edges = np.linalg.norm(corners - np.roll(corners, -1, axis=0), axis=1)
        return cls(n, centre, corners, edges)

    def transformed(self, rotation: np.ndarray, translation) -> "BoardFeatures":
        rotation = np.asarray(rotation, dtype=float)
        t = as_vec3(translation)
        return BoardFeatures(rotation @ self.normal, rotation @ self.centre + t,
                             self.corners @ rotation.T + t, self.edge_lengths.copy())


def order_corners(corners: np.ndarray, normal: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Order 4 corners as [top, right, bottom, left] viewed from the sensor.

    ``normal`` points toward the sensor and ``up`` is the sensor's up axis.
    """
    centre = corners.mean(axis=0)
    n = normal / np.linalg.norm(normal)
    u = up - np.dot(up, n) * n
    if np.linalg.norm(u) < 1e-9:
        # looking straight along the up axis: pick any in-plane axis
        u = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(u) < 1e-9:
            u = np.cross(n, [0.0, 1.0, 0.0])
    u = u / np.linalg.norm(u)
    # viewer looks along -n, so "right" on the image is up x n
    r = np.cross(u, n)
    d = corners - centre
    ang = np.arctan2(d @ r, d @ u)  # 0 at top, +pi/2 at right
    order = np.argsort(np.mod(ang + np.pi / 4, 2 * np.pi))
    return corners[order]


def board_dimension_error(features: BoardFeatures, board: BoardGeometry) -> float:
    """Sum of absolute edge-length errors in millimetres.

    The physical edges alternate width/height around the board; the phase
    that best matches the measurement is used.
    """
    measured = np.asarray(features.edge_lengths, dtype=float) * 1e3
    return float(min(np.sum(np.abs(measured - board.edge_lengths_mm(True))),
                     np.sum(np.abs(measured - board.edge_lengths_mm(False)))))
