"""Detection metrics: COCO-style AP/AR, weighted AP and distance MAE.

AP uses 101-point interpolation averaged over IoU thresholds
0.50:0.05:0.95; AR is max recall at 100 detections per image over the
same thresholds; MAE is computed over true-positive matches at IoU 0.5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kernels import iou_matrix

IOU_THRESHOLDS = tuple(0.5 + 0.05 * i for i in range(10))
MAE_IOU = 0.5
AR_MAX_DETECTIONS = 100
_RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def _det_sort_key(d):
    return (-d.score, d.box.x1, d.box.y1, d.box.x2, d.box.y2)


def match_detections(dets, gts, iou_threshold: float):
    """Greedy one-to-one matching of score-sorted detections to ground truth.

    Each detection takes the highest-IoU unmatched gt of its class with
    IoU >= threshold.  Returns (tp_flags, matched_gt_indices) aligned
    with the detection order given.
    """
    flags = []
    matched = []
    if dets and gts:
        ious = iou_matrix(
            np.stack([d.box.as_array() for d in dets]),
            np.stack([g.box.as_array() for g in gts]),
        )
    taken = [False] * len(gts)
    for i, det in enumerate(dets):
        best_j = None
        best_iou = iou_threshold
        for j, gt in enumerate(gts):
            if taken[j] or gt.class_name != det.class_name:
                continue
            if ious[i, j] >= best_iou:
                best_iou = ious[i, j]
                best_j = j
        if best_j is None:
            flags.append(False)
            matched.append(None)
        else:
            taken[best_j] = True
            flags.append(True)
            matched.append(best_j)
    return flags, matched


def average_precision(flags, num_gt: int) -> float | None:
    """101-point interpolated AP from score-ordered TP/FP flags.

    Returns None when there is nothing to score (no gts and no
    detections), so the caller can exclude the class from the mean.
    """
    if num_gt == 0:
        return None if not flags else 0.0
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=float))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=float))
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # precision envelope: max precision at any recall >= r
    interp = np.zeros_like(_RECALL_POINTS)
    for i, r in enumerate(_RECALL_POINTS):
        mask = recall >= r - 1e-12
        interp[i] = precision[mask].max() if mask.any() else 0.0
    return float(interp.mean())


def weighted_ap(per_class_ap: dict, per_class_gt_counts: dict) -> float | None:
    """Mean AP weighted by ground-truth appearance counts."""
    total = sum(per_class_gt_counts.get(c, 0) for c in per_class_ap)
    if total == 0:
        return None
    return (
        sum(per_class_ap[c] * per_class_gt_counts.get(c, 0) for c in per_class_ap)
        / total
    )


@dataclass
class EvalReport:
    per_class_ap: dict = field(default_factory=dict)  # class -> AP averaged over IoU thresholds
    per_class_ap50: dict = field(default_factory=dict)
    ap: float | None = None
    ap50: float | None = None
    ap75: float | None = None
    ar: float | None = None
    weighted_ap: float | None = None
    per_class_mae: dict = field(default_factory=dict)
    mae: float | None = None

    def to_json(self) -> str:
        def scale(v):
            return None if v is None else round(100.0 * v, 4)

        doc = {
            "AP": scale(self.ap),
            "AP50": scale(self.ap50),
            "AP75": scale(self.ap75),
            "AR": scale(self.ar),
            "weighted_AP": scale(self.weighted_ap),
            "MAE": None if self.mae is None else round(self.mae, 4),
            "per_class_AP": {c: scale(v) for c, v in sorted(self.per_class_ap.items())},
            "per_class_AP50": {c: scale(v) for c, v in sorted(self.per_class_ap50.items())},
            "per_class_MAE": {c: round(v, 4) for c, v in sorted(self.per_class_mae.items())},
        }
        return json.dumps(doc, indent=2)

    def render_table(self) -> str:
        def fmt(v, s=100.0):
            return "-" if v is None else f"{s * v:.2f}"

        lines = [
            "Weighted AP |    AP |  AP50 |  AP75 |    AR |  MAE",
            f"{fmt(self.weighted_ap):>11} | {fmt(self.ap):>5} | {fmt(self.ap50):>5} | "
            f"{fmt(self.ap75):>5} | {fmt(self.ar):>5} | {fmt(self.mae, 1.0):>4}",
        ]
        if self.per_class_ap50:
            lines.append("")
            lines.append("Per-class AP50 / MAE:")
            for cls in sorted(self.per_class_ap50):
                mae = self.per_class_mae.get(cls)
                lines.append(
                    f"  {cls:<12} {fmt(self.per_class_ap50[cls]):>6}"
                    f"  {fmt(mae, 1.0) if mae is not None else '-':>6}"
                )
        return "\n".join(lines)


def evaluate(scene_results: list[tuple[list, list]]) -> EvalReport:
    """Aggregate metrics over (detections, ground_truths) pairs per scene."""
    classes = set()
    for dets, gts in scene_results:
        classes.update(d.class_name for d in dets)
        classes.update(g.class_name for g in gts)

    gt_counts = {
        c: sum(1 for _, gts in scene_results for g in gts if g.class_name == c)
        for c in classes
    }

    # class -> threshold -> AP
    ap_table: dict[str, dict[float, float | None]] = {c: {} for c in classes}
    recall_table: dict[str, dict[float, float | None]] = {c: {} for c in classes}
    for thr in IOU_THRESHOLDS:
        for cls in classes:
            scored = []  # (score, tie_key, tp_flag)
            total_gt = gt_counts[cls]
            matched_total = 0
            for dets, gts in scene_results:
                top = sorted(dets, key=_det_sort_key)[:AR_MAX_DETECTIONS]
                cls_dets = [d for d in top if d.class_name == cls]
                cls_gts = [g for g in gts if g.class_name == cls]
                flags, _ = match_detections(cls_dets, cls_gts, thr)
                matched_total += sum(flags)
                for d, f in zip(cls_dets, flags):
                    scored.append((_det_sort_key(d), f))
            scored.sort(key=lambda x: x[0])
            flags = [f for _, f in scored]
            ap_table[cls][thr] = average_precision(flags, total_gt)
            recall_table[cls][thr] = matched_total / total_gt if total_gt else None

    report = EvalReport()

    def mean_over(values):
        vals = [v for v in values if v is not None]
        return float(np.mean(vals)) if vals else None

    for cls in classes:
        per_thr = [ap_table[cls][t] for t in IOU_THRESHOLDS]
        report.per_class_ap[cls] = mean_over(per_thr)
        report.per_class_ap50[cls] = ap_table[cls][IOU_THRESHOLDS[0]]
    valid = {c: v for c, v in report.per_class_ap.items() if v is not None}
    report.ap = mean_over(valid.values())
    report.ap50 = mean_over([ap_table[c][IOU_THRESHOLDS[0]] for c in classes])
    report.ap75 = mean_over([ap_table[c][0.75] for c in classes])
    report.weighted_ap = weighted_ap(valid, gt_counts)
    recalls = [recall_table[c][t] for c in classes for t in IOU_THRESHOLDS]
    report.ar = mean_over(recalls)

    per_class_mae, overall = distance_mae(scene_results)
    report.per_class_mae = per_class_mae
    report.mae = overall
    return report


def distance_mae(scene_results: list[tuple[list, list]]):
    """Per-class and overall mean absolute distance error over TP matches."""
    errors: dict[str, list[float]] = {}
    for dets, gts in scene_results:
        ordered = sorted(dets, key=_det_sort_key)
        flags, matched = match_detections(ordered, gts, MAE_IOU)
        for det, tp, j in zip(ordered, flags, matched):
            if tp:
                errors.setdefault(det.class_name, []).append(
                    abs(det.distance - gts[j].distance)
                )
    per_class = {c: float(np.mean(v)) for c, v in errors.items()}
    all_errors = [e for v in errors.values() for e in v]
    overall = float(np.mean(all_errors)) if all_errors else None
    return per_class, overall
