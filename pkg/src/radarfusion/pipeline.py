"""End-to-end orchestration: model assembly, inference and training."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataio import Scene, convert_annotations
from .fusion import MergeConfig, merge, nms
from .geometry import Box2D, planar_distance
from .kernels import iou_matrix
from .neural import (
    ParamBlock,
    RpnHead,
    RprHead,
    SecondStageHead,
    TinyBackbone,
    decode_distance,
    make_anchor_grid,
    sgd_step,
)
from .neural.heads import DEFAULT_POOL, DEFAULT_RATIOS, DEFAULT_SCALES
from .neural.layers import logistic_grad, roi_pool, roi_pool_backward, softmax
from .neural.losses import (
    LossBatch,
    distance_loss_grads,
    encode_distance,
    multitask_loss,
    multitask_loss_grads,
    smooth_l1,
    smooth_l1_grad,
)
from .proposals import (
    AnchorTable,
    Proposal,
    Source,
    assign_targets,
    decode_corner_offsets,
    default_anchor_table,
    encode_corner_offsets,
    generate_radar_proposals,
    Label,
)
from .radar import RadarSweepSet, aggregate_sweeps

BACKGROUND = 0  # second-stage class index reserved for background


@dataclass(frozen=True)
class Detection:
    box: Box2D
    class_name: str
    score: float
    distance: float
    source: Source = Source.IMAGE

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError("score must be in [0, 1]")
        if self.distance <= 0:
            raise ValueError("distance must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    anchor_table: AnchorTable = field(default_factory=default_anchor_table)
    merge: MergeConfig = field(default_factory=MergeConfig)
    rpn_scales: tuple = DEFAULT_SCALES
    rpn_ratios: tuple = DEFAULT_RATIOS
    rpn_pre_nms_top_n: int = 100
    rpn_batch: int = 64
    rpr_batch: int = 32
    second_stage_batch: int = 32
    second_stage_pos_iou: float = 0.5
    second_stage_pos_fraction: float = 0.25
    score_threshold: float = 0.05
    rpr_keep_threshold: float = 0.05
    learning_rate: float = 0.02
    epochs: int = 10
    seed: int = 0
    use_radar: bool = True
    use_image: bool = True

    @property
    def k(self) -> int:
        return len(self.rpn_scales) * len(self.rpn_ratios)

    def to_dict(self) -> dict:
        return {
            "anchors": json.loads(self.anchor_table.to_json()),
            "merge": {
                "match_iou": self.merge.match_iou,
                "nms_iou": self.merge.nms_iou,
                "max_proposals": self.merge.max_proposals,
            },
            "rpn": {
                "scales": list(self.rpn_scales),
                "ratios": list(self.rpn_ratios),
                "pre_nms_top_n": self.rpn_pre_nms_top_n,
                "batch": self.rpn_batch,
            },
            "rpr_batch": self.rpr_batch,
            "second_stage": {
                "batch": self.second_stage_batch,
                "pos_iou": self.second_stage_pos_iou,
                "pos_fraction": self.second_stage_pos_fraction,
            },
            "score_threshold": self.score_threshold,
            "rpr_keep_threshold": self.rpr_keep_threshold,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "use_radar": self.use_radar,
            "use_image": self.use_image,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        kwargs = {}
        if "anchors" in doc:
            kwargs["anchor_table"] = AnchorTable.from_json(json.dumps(doc["anchors"]))
        if "merge" in doc:
            kwargs["merge"] = MergeConfig(**doc["merge"])
        rpn = doc.get("rpn", {})
        if "scales" in rpn:
            kwargs["rpn_scales"] = tuple(rpn["scales"])
        if "ratios" in rpn:
            kwargs["rpn_ratios"] = tuple(rpn["ratios"])
        if "pre_nms_top_n" in rpn:
            kwargs["rpn_pre_nms_top_n"] = rpn["pre_nms_top_n"]
        if "batch" in rpn:
            kwargs["rpn_batch"] = rpn["batch"]
        second = doc.get("second_stage", {})
        if "batch" in second:
            kwargs["second_stage_batch"] = second["batch"]
        if "pos_iou" in second:
            kwargs["second_stage_pos_iou"] = second["pos_iou"]
        if "pos_fraction" in second:
            kwargs["second_stage_pos_fraction"] = second["pos_fraction"]
        for key in (
            "rpr_batch",
            "score_threshold",
            "rpr_keep_threshold",
            "learning_rate",
            "epochs",
            "seed",
            "use_radar",
            "use_image",
        ):
            if key in doc:
                kwargs[key] = doc[key]
        return cls(**kwargs)


class FusionModel:
    """Backbone + RPR + RPN + second-stage heads over one ParamBlock."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.backbone = TinyBackbone()
        self.rpr = RprHead(channels=TinyBackbone.CHANNELS, pool=DEFAULT_POOL)
        self.rpn = RpnHead(cin=TinyBackbone.CHANNELS, k=cfg.k)
        self.classes = cfg.anchor_table.classes
        self.second = SecondStageHead(num_classes=len(self.classes), channels=TinyBackbone.CHANNELS, pool=DEFAULT_POOL)

    def init_params(self, seed: int | None = None) -> ParamBlock:
        rng = np.random.default_rng(self.cfg.seed if seed is None else seed)
        params = ParamBlock()
        self.backbone.init_params(params, rng)
        self.rpr.init_params(params, rng)
        self.rpn.init_params(params, rng)
        self.second.init_params(params, rng)
        return params

    def class_name(self, index: int) -> str:
        # index 0 is background
        return self.classes[index - 1]


def _scene_sweep_set(scene: Scene) -> RadarSweepSet:
    if not scene.radar_sweeps:
        return RadarSweepSet(detections=(), reference_time=0.0)
    ref = max(t for t, _ in scene.radar_sweeps)
    return aggregate_sweeps([(dets, t) for t, dets in scene.radar_sweeps], reference_time=ref)


def _pool_batch(fm, boxes, pool=DEFAULT_POOL):
    pooled = []
    caches = []
    for box in boxes:
        p, c = roi_pool(fm, box, (pool, pool))
        pooled.append(p)
        caches.append(c)
    return np.stack(pooled), caches


def refine_radar_proposals(model, fm, proposals, params, image_size):
    """Run RPR over radar proposals: refined boxes + objectness scores.

    Distances are copied through untouched from the seeding proposals.
    """
    if not proposals:
        return []
    pooled, _ = _pool_batch(fm, [p.box for p in proposals])
    objectness, offsets, _, _ = model.rpr.forward(pooled, params)
    refined = []
    for prop, score, off in zip(proposals, objectness, offsets):
        box = decode_corner_offsets(prop.box, off, image_size)
        if box is None:
            continue
        refined.append(replace(prop, box=box, score=float(score)))
    return refined


def image_proposals_from_rpn(model, rpn_out, anchor_grid, image_size, cfg: PipelineConfig):
    """Decode the top RPN activations into image-source proposals."""
    h, w, k = rpn_out.objectness.shape
    scores = rpn_out.objectness.reshape(-1)
    order = np.lexsort((np.arange(scores.size), -scores))[: cfg.rpn_pre_nms_top_n]
    anchors = anchor_grid.reshape(-1, 4)
    deltas = rpn_out.box_deltas.reshape(-1, 4)
    dist_raw = rpn_out.distance_raw.reshape(-1)
    out = []
    for idx in order:
        a = anchors[idx]
        if a[0] >= a[2] or a[1] >= a[3]:
            continue
        box = decode_corner_offsets(Box2D(*a), deltas[idx], image_size)
        if box is None:
            continue
        out.append(
            Proposal(
                box=box,
                distance=decode_distance(dist_raw[idx]),
                score=float(scores[idx]),
                source=Source.IMAGE,
            )
        )
    return out


def second_stage(model: FusionModel, fm, proposals, params, cfg: PipelineConfig):
    """Classify merged proposals; distances pass through unchanged."""
    if not proposals:
        return []
    image_size = (fm.data.shape[1] * fm.stride, fm.data.shape[0] * fm.stride)
    pooled, _ = _pool_batch(fm, [p.box for p in proposals])
    probs, deltas, _, _ = model.second.forward(pooled, params)
    detections = []
    for prop, pr, dl in zip(proposals, probs, deltas):
        best = int(np.argmax(pr))
        if best == BACKGROUND:
            continue
        score = float(pr[best])
        if score < cfg.score_threshold:
            continue
        box = decode_corner_offsets(prop.box, dl[best], image_size)
        if box is None:
            continue
        detections.append(
            Detection(
                box=box,
                class_name=model.class_name(best),
                score=score,
                distance=prop.distance,
                source=prop.source,
            )
        )
    return detections


def detect(scene: Scene, model: FusionModel, params: ParamBlock, cfg: PipelineConfig):
    """Full pipeline on one scene; pure function of (scene, params, cfg)."""
    try:
        image = np.asarray(scene.image, dtype=np.float64) / 255.0
        image_size = (scene.calibration.width, scene.calibration.height)
        fm, _ = model.backbone.forward(image, params)

        radar_props = []
        if cfg.use_radar:
            sweep_set = _scene_sweep_set(scene)
            raw = generate_radar_proposals(sweep_set, cfg.anchor_table, scene.calibration)
            refined = refine_radar_proposals(model, fm, raw, params, image_size)
            radar_props = [p for p in refined if p.score >= cfg.rpr_keep_threshold]

        image_props = []
        if cfg.use_image:
            rpn_out = model.rpn.forward(fm.data, params)
            grid = make_anchor_grid(
                fm.data.shape[0], fm.data.shape[1], fm.stride, cfg.rpn_scales, cfg.rpn_ratios
            )
            image_props = image_proposals_from_rpn(model, rpn_out, grid, image_size, cfg)

        merged = merge(radar_props, image_props, cfg.merge)
        detections = second_stage(model, fm, merged, params, cfg)
        # final class-wise NMS: the second stage re-boxes proposals, so
        # duplicates of one object can survive the proposal-level pass
        final = []
        for cls in sorted({d.class_name for d in detections}):
            final.extend(nms([d for d in detections if d.class_name == cls], cfg.merge.nms_iou))
        final.sort(key=lambda d: (-d.score, d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.class_name))
        return final
    except Exception as exc:
        raise RuntimeError(f"detect failed on scene {scene.id!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# Training


def _sample_indices(rng, pos, neg, batch, pos_fraction):
    n_pos = min(len(pos), max(1, int(round(batch * pos_fraction)))) if pos else 0
    n_neg = min(len(neg), batch - n_pos)
    chosen_pos = list(rng.choice(len(pos), size=n_pos, replace=False)) if n_pos else []
    chosen_neg = list(rng.choice(len(neg), size=n_neg, replace=False)) if n_neg else []
    return [pos[i] for i in chosen_pos], [neg[i] for i in chosen_neg]


def _rpr_step(model, fm, radar_props, gt_boxes, params, cfg, rng):
    """RPR loss and gradients; returns (loss, dfm)."""
    if not radar_props:
        return 0.0, np.zeros_like(fm.data)
    assignments = assign_targets(radar_props, gt_boxes)
    labels = [a.label for a in assignments]
    targets = {i: a.regression_target for i, a in enumerate(assignments) if a.label == Label.POSITIVE}
    # force the best-IoU proposal per gt positive: edge-biased radar
    # seeds rarely clear the positive threshold on their own, and the
    # refinement regression has to see the offsets it must undo
    if gt_boxes:
        ious = iou_matrix(
            np.stack([p.box.as_array() for p in radar_props]),
            np.stack([g.as_array() for g in gt_boxes]),
        )
        for j, gt in enumerate(gt_boxes):
            top = float(ious[:, j].max())
            if top <= 0.0:
                continue
            for i in np.flatnonzero(ious[:, j] == top):
                labels[i] = Label.POSITIVE
                targets[i] = encode_corner_offsets(radar_props[i].box, gt)
    pos = [i for i, lab in enumerate(labels) if lab == Label.POSITIVE]
    neg = [i for i, lab in enumerate(labels) if lab == Label.NEGATIVE]
    pos, neg = _sample_indices(rng, pos, neg, cfg.rpr_batch, 0.5)
    chosen = pos + neg
    if not chosen:
        return 0.0, np.zeros_like(fm.data)
    boxes = [radar_props[i].box for i in chosen]
    pooled, pool_caches = _pool_batch(fm, boxes)
    objectness, offsets, logits, cache = model.rpr.forward(pooled, params)
    p_star = np.array([1.0] * len(pos) + [0.0] * len(neg))
    t = offsets[: len(pos)]
    t_star = np.array([targets[i] for i in pos], dtype=np.float64).reshape(len(pos), 4)
    batch = LossBatch(
        p=objectness, p_star=p_star, t=t, t_star=t_star,
        n_cls=len(chosen), n_reg=max(len(pos), 1),
    )
    loss, dp, dt = multitask_loss_grads(batch)
    dlogits = dp * logistic_grad(logits)
    doffsets = np.zeros_like(offsets)
    doffsets[: len(pos)] = dt
    dpooled = model.rpr.backward(dlogits, doffsets, cache, params)
    dfm = np.zeros_like(fm.data)
    for dpool, pc in zip(dpooled, pool_caches):
        dfm += roi_pool_backward(dpool, pc)
    return loss, dfm


def _rpn_targets(anchor_grid, gt_boxes, gt_dists):
    """Anchor labels via 0.7/0.3 IoU plus best-anchor-per-gt forcing.

    Returns (labels (A,), matched_gt (A,)) over flattened anchors;
    labels: 1 positive, 0 negative, -1 ignore.
    """
    anchors = anchor_grid.reshape(-1, 4)
    n = anchors.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    if not gt_boxes:
        return labels, matched
    gts = np.stack([g.as_array() for g in gt_boxes])
    ious = iou_matrix(anchors, gts)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(n), best_gt]
    labels[best_iou >= 0.7] = 1
    labels[(best_iou >= 0.3) & (best_iou < 0.7)] = -1
    # force the highest-IoU anchor for every gt positive
    for j in range(len(gt_boxes)):
        top = float(ious[:, j].max())
        if top > 0:
            labels[ious[:, j] == top] = 1
    matched[labels == 1] = best_gt[labels == 1]
    return labels, matched


def _rpn_step(model, fm, gt2d, params, cfg, rng):
    """RPN objectness + box + distance losses; returns (loss, dfm)."""
    rpn_out = model.rpn.forward(fm.data, params)
    h, w, k = rpn_out.objectness.shape
    grid = make_anchor_grid(h, w, fm.stride, cfg.rpn_scales, cfg.rpn_ratios)
    gt_boxes = [g.box for g in gt2d]
    labels, matched = _rpn_targets(grid, gt_boxes, [g.distance for g in gt2d])
    pos = list(np.flatnonzero(labels == 1))
    neg = list(np.flatnonzero(labels == 0))
    pos, neg = _sample_indices(rng, pos, neg, cfg.rpn_batch, 0.5)
    chosen = pos + neg
    if not chosen:
        return 0.0, np.zeros_like(fm.data)

    anchors = grid.reshape(-1, 4)
    obj_logits = rpn_out.obj_logits.reshape(-1, 2)
    box_deltas = rpn_out.box_deltas.reshape(-1, 4)
    dist_raw = rpn_out.distance_raw.reshape(-1)

    p = rpn_out.objectness.reshape(-1)[chosen]
    p_star = np.array([1.0] * len(pos) + [0.0] * len(neg))
    t = box_deltas[pos]
    t_star = np.array(
        [encode_corner_offsets(Box2D(*anchors[i]), gt_boxes[matched[i]]) for i in pos],
        dtype=np.float64,
    ).reshape(len(pos), 4)
    batch = LossBatch(p=p, p_star=p_star, t=t, t_star=t_star, n_cls=len(chosen), n_reg=max(len(pos), 1))
    loss, dp, dt = multitask_loss_grads(batch)

    dobj = np.zeros_like(obj_logits)
    probs = softmax(obj_logits[chosen], axis=-1)
    # dL/dp routed through the softmax pair: p = softmax(...)[1]
    dpair = np.zeros_like(probs)
    dpair[:, 1] = dp
    dot = (dpair * probs).sum(axis=1, keepdims=True)
    dobj[chosen] = probs * (dpair - dot)

    dbox = np.zeros_like(box_deltas)
    dbox[pos] = dt

    d_star = np.array([gt2d[matched[i]].distance for i in pos], dtype=np.float64)
    mask = np.zeros(dist_raw.shape, dtype=bool)
    mask[pos] = True
    d_star_full = np.ones(dist_raw.shape)
    d_star_full[pos] = d_star
    dist_l, ddist = distance_loss_grads(dist_raw, d_star_full, mask)
    loss += dist_l

    dfm = model.rpn.backward(
        dobj.reshape(h, w, k, 2), dbox.reshape(h, w, k, 4), ddist.reshape(h, w, k),
        rpn_out.cache, params,
    )
    return loss, dfm


def _jitter_box(box: Box2D, rng, image_size, scale=0.15):
    w, h = box.width, box.height
    vals = rng.uniform(-scale, scale, size=4)
    return decode_corner_offsets(box, vals, image_size)


def _second_stage_step(model, fm, gt2d, radar_props, params, cfg, rng):
    """Second-stage classification + box regression; returns (loss, dfm)."""
    image_size = (fm.data.shape[1] * fm.stride, fm.data.shape[0] * fm.stride)
    candidates = [p.box for p in radar_props]
    for g in gt2d:
        candidates.append(g.box)
        for _ in range(3):
            jit = _jitter_box(g.box, rng, image_size)
            if jit is not None:
                candidates.append(jit)
    # background candidates: random boxes across the image
    wmax, hmax = image_size
    for _ in range(12):
        x1 = rng.uniform(0, wmax - 24)
        y1 = rng.uniform(0, hmax - 24)
        bw = rng.uniform(16, wmax / 2)
        bh = rng.uniform(12, hmax / 2)
        candidates.append(Box2D(x1, y1, min(x1 + bw, wmax), min(y1 + bh, hmax)))

    if not candidates:
        return 0.0, np.zeros_like(fm.data)
    gt_boxes = [g.box for g in gt2d]
    if gt_boxes:
        ious = iou_matrix(np.stack([b.as_array() for b in candidates]), np.stack([b.as_array() for b in gt_boxes]))
        best_gt = ious.argmax(axis=1)
        best_iou = ious[np.arange(len(candidates)), best_gt]
    else:
        best_gt = np.zeros(len(candidates), dtype=int)
        best_iou = np.zeros(len(candidates))
    pos = [i for i in range(len(candidates)) if best_iou[i] >= cfg.second_stage_pos_iou]
    neg = [i for i in range(len(candidates)) if best_iou[i] < cfg.second_stage_pos_iou]
    pos, neg = _sample_indices(rng, pos, neg, cfg.second_stage_batch, cfg.second_stage_pos_fraction)
    chosen = pos + neg
    if not chosen:
        return 0.0, np.zeros_like(fm.data)

    boxes = [candidates[i] for i in chosen]
    pooled, pool_caches = _pool_batch(fm, boxes)
    probs, deltas, logits, cache = model.second.forward(pooled, params)

    n = len(chosen)
    labels = np.zeros(n, dtype=np.int64)
    for row, i in enumerate(pos):
        labels[row] = model.classes.index(gt2d[best_gt[i]].class_name) + 1

    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    cls_loss = float(-np.log(np.clip(probs[np.arange(n), labels], 1e-12, None)).sum()) / n
    dlogits = (probs - onehot) / n

    ddeltas = np.zeros_like(deltas)
    reg_loss = 0.0
    n_fg = max(len(pos), 1)
    for row, i in enumerate(pos):
        target = np.array(encode_corner_offsets(candidates[i], gt_boxes[best_gt[i]]))
        diff = deltas[row, labels[row]] - target
        reg_loss += float(smooth_l1(diff).sum())
        ddeltas[row, labels[row]] = smooth_l1_grad(diff) / n_fg
    reg_loss /= n_fg

    dpooled = model.second.backward(dlogits, ddeltas, cache, params)
    dfm = np.zeros_like(fm.data)
    for dpool, pc in zip(dpooled, pool_caches):
        dfm += roi_pool_backward(dpool, pc)
    return cls_loss + reg_loss, dfm


def train(dataset: list[Scene], cfg: PipelineConfig, model: FusionModel | None = None, log=None):
    """Joint mini-batch SGD over RPR, RPN and second-stage losses.

    Returns (model, params, loss_curve) with one mean loss per epoch.
    Deterministic given cfg.seed and the dataset order.
    """
    if not dataset:
        raise ValueError("dataset must not be empty")
    if model is None:
        model = FusionModel(cfg)
    params = model.init_params()
    rng = np.random.default_rng(cfg.seed + 1)

    # radar proposals and ground truth do not depend on the parameters
    per_scene = []
    for scene in dataset:
        gt2d = convert_annotations(scene)
        sweep_set = _scene_sweep_set(scene)
        radar_props = generate_radar_proposals(sweep_set, cfg.anchor_table, scene.calibration)
        per_scene.append((scene, gt2d, radar_props))

    loss_curve = []
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for scene, gt2d, radar_props in per_scene:
            image = np.asarray(scene.image, dtype=np.float64) / 255.0
            fm, bb_cache = model.backbone.forward(image, params)
            gt_boxes = [g.box for g in gt2d]

            total_dfm = np.zeros_like(fm.data)
            loss = 0.0
            if cfg.use_radar:
                l, dfm = _rpr_step(model, fm, radar_props, gt_boxes, params, cfg, rng)
                loss += l
                total_dfm += dfm
            if cfg.use_image:
                l, dfm = _rpn_step(model, fm, gt2d, params, cfg, rng)
                loss += l
                total_dfm += dfm
            l, dfm = _second_stage_step(
                model, fm, gt2d, radar_props if cfg.use_radar else [], params, cfg, rng
            )
            loss += l
            total_dfm += dfm

            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss on scene {scene.id!r}")
            model.backbone.backward(total_dfm, bb_cache, params)
            sgd_step(params, cfg.learning_rate)
            epoch_losses.append(loss)
        loss_curve.append(float(np.mean(epoch_losses)))
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs}: loss {loss_curve[-1]:.4f}")
    return model, params, loss_curve
