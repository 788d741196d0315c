"""Pinhole camera math, rigid transforms and axis-aligned box algebra.

Coordinate conventions used throughout the package:

Vehicle frame (right-handed):
  - x: forward, y: left, z: up
  - ground plane: z = 0

Camera frame (right-handed, standard computer vision):
  - x: right in the image, y: down, z: forward along the optical axis

Image frame:
  - u: right (pixels), v: down (pixels), origin at the top-left corner
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Depth below which a point counts as behind the camera (meters).
EPSILON_DEPTH = 1e-6

_ROTATION_TOL = 1e-9


def _check_rotation(rotation: np.ndarray, tol: float = _ROTATION_TOL) -> None:
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=tol):
        raise ValueError("rotation is not orthonormal")
    if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=max(tol, 1e-9)):
        raise ValueError("rotation determinant is not +1")


@dataclass(frozen=True)
class CameraCalibration:
    """Intrinsics + camera-from-vehicle extrinsics + image size.

    ``rotation`` and ``translation`` map vehicle-frame points into the
    camera frame: ``p_cam = R @ p_veh + t``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3), camera-from-vehicle
    translation: np.ndarray  # (3,), meters
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        rot = np.array(self.rotation, dtype=float)
        _check_rotation(rot)
        trans = np.array(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)


# Canonical forward-camera rotation: camera x = -vehicle y, camera y =
# -vehicle z, camera z = vehicle x.
FORWARD_CAMERA_ROTATION = np.array(
    [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]
)


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return float((yaw + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box in the vehicle frame.

    ``size`` is (w, l, h): width across the heading, length along the
    heading, height along z.  ``yaw`` is counter-clockwise about +z,
    zero pointing along vehicle +x.
    """

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        w, l, h = self.size
        if w <= 0 or l <= 0 or h <= 0:
            raise ValueError("box size must be positive")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned continuous pixel-space box, x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box: {(self.x1, self.y1, self.x2, self.y2)}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)


def project_to_image(
    point: np.ndarray, calib: CameraCalibration
) -> tuple[float, float] | None:
    """Project a vehicle-frame 3D point to pixels.

    Returns None when the camera-frame depth is <= EPSILON_DEPTH.  The
    result may lie outside the image bounds; clipping is the caller's
    job.
    """
    p = np.asarray(point, dtype=float).reshape(3)
    pc = calib.rotation @ p + calib.translation
    z = float(pc[2])
    if z <= EPSILON_DEPTH:
        return None
    u = calib.fx * float(pc[0]) / z + calib.cx
    v = calib.fy * float(pc[1]) / z + calib.cy
    return (u, v)


# Footprint corner order: counter-clockwise viewed from above, starting
# at local (+l/2, +w/2); bottom face first, then top face.
_CORNER_SIGNS = np.array(
    [[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=float
)


def box3d_corners(box: Box3D) -> np.ndarray:
    """The 8 corners of a yaw-rotated cuboid, vehicle frame, shape (8, 3).

    Order: bottom face counter-clockwise from the (+x, +y) local corner,
    then the top face in the same order.
    """
    w, l, h = box.size
    local = _CORNER_SIGNS * np.array([l / 2.0, w / 2.0])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    footprint = local @ rot.T + np.array(box.center[:2])
    corners = np.empty((8, 3), dtype=float)
    corners[:4, :2] = footprint
    corners[4:, :2] = footprint
    corners[:4, 2] = box.center[2] - h / 2.0
    corners[4:, 2] = box.center[2] + h / 2.0
    return corners


def enclosing_box2d(box: Box3D, calib: CameraCalibration) -> Box2D | None:
    """Smallest axis-aligned pixel box containing all projected corners.

    Returns None if any corner is behind the camera or the box clipped
    to the image bounds has zero area.
    """
    pts = []
    for corner in box3d_corners(box):
        uv = project_to_image(corner, calib)
        if uv is None:
            return None
        pts.append(uv)
    pts = np.asarray(pts)
    x1 = max(float(pts[:, 0].min()), 0.0)
    y1 = max(float(pts[:, 1].min()), 0.0)
    x2 = min(float(pts[:, 0].max()), float(calib.width))
    y2 = min(float(pts[:, 1].max()), float(calib.height))
    if x1 >= x2 or y1 >= y2:
        return None
    return Box2D(x1, y1, x2, y2)


def iou_2d(a: Box2D, b: Box2D) -> float:
    """Intersection-over-union of two axis-aligned boxes, exact."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def planar_distance(point) -> float:
    """Distance in the ground plane: sqrt(x^2 + y^2), ignoring z."""
    p = np.asarray(point, dtype=float)
    return float(math.hypot(p[0], p[1]))
