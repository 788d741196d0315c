"""Radar-seeded 3D anchors, their 2D proposals and training-target assignment."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import Box2D, Box3D, CameraCalibration, enclosing_box2d, planar_distance
from .kernels import iou_matrix
from .radar import RadarDetection, RadarSweepSet

# IoU thresholds for proposal-stage target assignment.
POSITIVE_IOU = 0.7
NEGATIVE_IOU = 0.3

ANCHOR_ORIENTATIONS = (0.0, math.pi / 2.0)

# Per-class mean sizes (w, l, h) in meters.  Placeholder averages; the
# exporter's `anchors` command recomputes them from real training data.
DEFAULT_ANCHOR_SIZES = {
    "car": (1.9, 4.6, 1.7),
    "truck": (2.5, 7.0, 2.8),
    "person": (0.65, 0.7, 1.75),
    "bus": (2.9, 11.0, 3.4),
    "bicycle": (0.6, 1.7, 1.3),
    "motorcycle": (0.75, 2.1, 1.45),
}


class Source(str, Enum):
    RADAR = "radar"
    IMAGE = "image"


@dataclass(frozen=True)
class AnchorTable:
    """Class name -> (w, l, h) prior sizes, with the fixed two-yaw set."""

    sizes: dict[str, tuple[float, float, float]]

    def __post_init__(self):
        if not self.sizes:
            raise ValueError("anchor table must not be empty")
        for name, (w, l, h) in self.sizes.items():
            if w <= 0 or l <= 0 or h <= 0:
                raise ValueError(f"non-positive anchor size for class {name!r}")

    @property
    def classes(self) -> list[str]:
        return list(self.sizes.keys())

    def to_json(self) -> str:
        doc = {
            "classes": {k: list(v) for k, v in self.sizes.items()},
            "orientations_deg": [0, 90],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AnchorTable":
        doc = json.loads(text)
        sizes = {k: tuple(float(x) for x in v) for k, v in doc["classes"].items()}
        return cls(sizes=sizes)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "AnchorTable":
        return cls.from_json(Path(path).read_text())


def default_anchor_table() -> AnchorTable:
    return AnchorTable(sizes=dict(DEFAULT_ANCHOR_SIZES))


@dataclass(frozen=True)
class Proposal:
    """A 2D box proposal with an associated distance estimate."""

    box: Box2D
    distance: float
    score: float
    source: Source
    class_hint: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError("score must be in [0, 1]")
        if self.source == Source.RADAR and self.distance <= 0.0:
            raise ValueError("radar proposals must carry a positive distance")


class Label(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORE = "ignore"


@dataclass(frozen=True)
class TargetAssignment:
    label: Label
    matched_gt: int | None = None
    regression_target: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.label == Label.POSITIVE and self.matched_gt is None:
            raise ValueError("positive assignment requires a matched gt")
        if self.label == Label.IGNORE and self.regression_target is not None:
            raise ValueError("ignored proposals carry no regression target")


def generate_radar_anchors(
    detections: RadarSweepSet, anchors: AnchorTable
) -> list[tuple[Box3D, str, float]]:
    """All 3D anchors seeded by the detections, before projection.

    Exactly 2 * n_classes boxes per detection: every class size at both
    orientations, centered at the detection's (x, y) with z = h/2 so
    the box rests on the ground plane.  Each entry carries the seeding
    detection's planar distance.
    """
    out = []
    for det in detections.detections:
        x, y, _ = det.position
        dist = planar_distance(det.position)
        for name, (w, l, h) in anchors.sizes.items():
            for yaw in ANCHOR_ORIENTATIONS:
                box = Box3D(center=(x, y, h / 2.0), size=(w, l, h), yaw=yaw)
                out.append((box, name, dist))
    return out


def generate_radar_proposals(
    detections: RadarSweepSet, anchors: AnchorTable, calib: CameraCalibration
) -> list[Proposal]:
    """Map radar-seeded anchors to 2D proposals; drop boxes that do not project.

    Score 1.0 is a placeholder until RPR refinement assigns objectness.
    """
    proposals = []
    for box3d, name, dist in generate_radar_anchors(detections, anchors):
        box2d = enclosing_box2d(box3d, calib)
        if box2d is None:
            continue
        proposals.append(
            Proposal(box=box2d, distance=dist, score=1.0, source=Source.RADAR, class_hint=name)
        )
    return proposals


def encode_corner_offsets(proposal: Box2D, gt: Box2D) -> tuple[float, float, float, float]:
    """Corner offsets from proposal to gt, normalized by proposal size."""
    pw = proposal.width
    ph = proposal.height
    return (
        (gt.x1 - proposal.x1) / pw,
        (gt.y1 - proposal.y1) / ph,
        (gt.x2 - proposal.x2) / pw,
        (gt.y2 - proposal.y2) / ph,
    )


def decode_corner_offsets(
    proposal: Box2D, offsets, image_size: tuple[int, int]
) -> Box2D | None:
    """Inverse of encode_corner_offsets, clipped to image bounds.

    Returns None when clipping collapses the box to <= 1 px^2.
    """
    width, height = image_size
    pw = proposal.width
    ph = proposal.height
    x1 = min(max(proposal.x1 + offsets[0] * pw, 0.0), float(width))
    y1 = min(max(proposal.y1 + offsets[1] * ph, 0.0), float(height))
    x2 = min(max(proposal.x2 + offsets[2] * pw, 0.0), float(width))
    y2 = min(max(proposal.y2 + offsets[3] * ph, 0.0), float(height))
    if x2 <= x1 or y2 <= y1 or (x2 - x1) * (y2 - y1) <= 1.0:
        return None
    return Box2D(x1, y1, x2, y2)


def assign_targets(
    proposals: list[Proposal], gts: list[Box2D]
) -> list[TargetAssignment]:
    """Label proposals positive / negative / ignore against ground truth.

    Max IoU >= 0.7 -> positive (with corner-offset regression target to
    the argmax gt), < 0.3 -> negative, in between -> ignore.
    """
    if not proposals:
        return []
    if not gts:
        return [TargetAssignment(label=Label.NEGATIVE) for _ in proposals]
    ious = iou_matrix(
        np.stack([p.box.as_array() for p in proposals]),
        np.stack([g.as_array() for g in gts]),
    )
    out = []
    for i, prop in enumerate(proposals):
        j = int(np.argmax(ious[i]))
        best = float(ious[i, j])
        if best >= POSITIVE_IOU:
            target = encode_corner_offsets(prop.box, gts[j])
            out.append(TargetAssignment(label=Label.POSITIVE, matched_gt=j, regression_target=target))
        elif best < NEGATIVE_IOU:
            out.append(TargetAssignment(label=Label.NEGATIVE))
        else:
            out.append(TargetAssignment(label=Label.IGNORE))
    return out
