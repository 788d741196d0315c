"""Radar detection model, frame normalization and multi-sweep aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import planar_distance

_ROTATION_TOL = 1e-6

# Default maximum sweep age; typical automotive radar sweep spacing.
DEFAULT_MAX_AGE = 0.5


@dataclass(frozen=True)
class RadarDetection:
    """One radar return in the vehicle frame.

    Automotive radars report no height, so z is typically 0.  Velocity
    is ego-motion compensated, m/s, in the ground plane.
    """

    position: tuple[float, float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    rcs: float = 0.0
    timestamp: float = 0.0
    sensor_id: int = 0

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        if planar_distance(self.position) <= 0.0:
            raise ValueError("detection must be away from the vehicle origin")


@dataclass(frozen=True)
class RadarSweepSet:
    """Detections from one or more sweeps, all in the vehicle frame at reference_time."""

    detections: tuple[RadarDetection, ...]
    reference_time: float

    def __len__(self) -> int:
        return len(self.detections)


def to_vehicle_frame(
    detections: list[RadarDetection],
    rotation: np.ndarray,
    translation: np.ndarray,
) -> list[RadarDetection]:
    """Map sensor-frame detections into the vehicle frame.

    ``rotation``/``translation`` form the vehicle-from-sensor rigid
    transform.  Positions are rotated and translated; velocities are
    direction vectors and only rotate.
    """
    rot = np.asarray(rotation, dtype=float)
    if rot.shape != (3, 3) or not np.allclose(rot.T @ rot, np.eye(3), atol=_ROTATION_TOL):
        raise ValueError("transform rotation is not orthonormal")
    trans = np.asarray(translation, dtype=float).reshape(3)
    out = []
    for det in detections:
        pos = rot @ np.asarray(det.position, dtype=float) + trans
        vel3 = rot @ np.array([det.velocity[0], det.velocity[1], 0.0])
        out.append(
            replace(
                det,
                position=(float(pos[0]), float(pos[1]), float(pos[2])),
                velocity=(float(vel3[0]), float(vel3[1])),
            )
        )
    return out


def aggregate_sweeps(
    sweeps: list[tuple[list[RadarDetection], float]],
    reference_time: float,
    max_age: float = DEFAULT_MAX_AGE,
    compensate_motion: bool = False,
) -> RadarSweepSet:
    """Concatenate time-sorted sweeps, dropping detections older than max_age.

    With ``compensate_motion`` enabled, positions are advanced by
    velocity * (reference_time - sweep_time).
    """
    kept = []
    for detections, t in sweeps:
        age = reference_time - t
        if age > max_age:
            continue
        for det in detections:
            if compensate_motion and age != 0.0:
                x, y, z = det.position
                det = replace(
                    det,
                    position=(x + det.velocity[0] * age, y + det.velocity[1] * age, z),
                )
            kept.append(det)
    return RadarSweepSet(detections=tuple(kept), reference_time=reference_time)
