"""Radar-camera fusion for 2D detection with per-object distance estimation."""

__version__ = "0.1.0"

from .geometry import Box2D, Box3D, CameraCalibration
from .proposals import AnchorTable, Proposal, Source
from .radar import RadarDetection, RadarSweepSet

__all__ = [
    "AnchorTable",
    "Box2D",
    "Box3D",
    "CameraCalibration",
    "Proposal",
    "RadarDetection",
    "RadarSweepSet",
    "Source",
    "__version__",
]
