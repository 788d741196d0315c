"""Radar/image proposal merging: distance overwrite, then NMS."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .kernels import iou_matrix
from .proposals import Proposal, Source


@dataclass(frozen=True)
class MergeConfig:
    match_iou: float = 0.5
    nms_iou: float = 0.5
    max_proposals: int = 300

    def __post_init__(self):
        if not (0.0 < self.match_iou < 1.0 and 0.0 < self.nms_iou < 1.0):
            raise ValueError("IoU thresholds must be in (0, 1)")
        if self.max_proposals < 1:
            raise ValueError("max_proposals must be >= 1")


def _boxes(props: list[Proposal]) -> np.ndarray:
    if not props:
        return np.zeros((0, 4))
    return np.stack([p.box.as_array() for p in props])


def refine_distances(
    radar_props: list[Proposal],
    image_props: list[Proposal],
    match_iou: float,
) -> tuple[list[Proposal], np.ndarray]:
    """Overwrite image distances with matching radar distances.

    For every image proposal whose best radar IoU >= match_iou, the
    distance becomes that radar proposal's distance, copied exactly.
    Ties on IoU go to the smaller radar distance.  Returns the updated
    image proposals and the radar x image IoU matrix for reuse.
    """
    ious = iou_matrix(_boxes(radar_props), _boxes(image_props))
    if not radar_props or not image_props:
        return list(image_props), ious
    updated = []
    for j, prop in enumerate(image_props):
        col = ious[:, j]
        best = float(col.max())
        if best >= match_iou:
            candidates = [i for i in range(len(radar_props)) if col[i] == best]
            winner = min(candidates, key=lambda i: radar_props[i].distance)
            prop = replace(prop, distance=radar_props[winner].distance)
        updated.append(prop)
    return updated, ious


def _nms_order_key(item):
    idx, p = item
    # Score descending, then radar before image, then smaller distance,
    # then lexicographic box coordinates: a total order making NMS pure.
    return (
        -p.score,
        0 if p.source == Source.RADAR else 1,
        p.distance,
        p.box.x1,
        p.box.y1,
        p.box.x2,
        p.box.y2,
    )


def nms(
    props: list[Proposal],
    nms_iou: float,
    iou_cache: np.ndarray | None = None,
) -> list[Proposal]:
    """Greedy non-maximum suppression over one source-agnostic pool."""
    if not props:
        return []
    if iou_cache is None:
        boxes = _boxes(props)
        iou_cache = iou_matrix(boxes, boxes)
    order = [idx for idx, _ in sorted(enumerate(props), key=_nms_order_key)]
    keep = []
    suppressed = np.zeros(len(props), dtype=bool)
    for idx in order:
        if suppressed[idx]:
            continue
        keep.append(idx)
        for other in order:
            if other != idx and not suppressed[other] and iou_cache[idx, other] >= nms_iou:
                suppressed[other] = True
    return [props[i] for i in keep]


def merge(
    radar_props: list[Proposal],
    image_props: list[Proposal],
    cfg: MergeConfig,
) -> list[Proposal]:
    """Distance refinement, NMS over the union, truncation to max_proposals."""
    refined_image, cross_ious = refine_distances(radar_props, image_props, cfg.match_iou)
    pool = list(radar_props) + refined_image
    if not pool:
        return []
    n_radar = len(radar_props)
    boxes = _boxes(pool)
    full = np.empty((len(pool), len(pool)))
    full[:n_radar, :n_radar] = iou_matrix(boxes[:n_radar], boxes[:n_radar])
    full[n_radar:, n_radar:] = iou_matrix(boxes[n_radar:], boxes[n_radar:])
    full[:n_radar, n_radar:] = cross_ious
    full[n_radar:, :n_radar] = cross_ious.T
    kept = nms(pool, cfg.nms_iou, iou_cache=full)
    return kept[: cfg.max_proposals]
