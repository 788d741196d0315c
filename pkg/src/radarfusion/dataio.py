"""Scene files, ground-truth conversion, synthetic scenes and overlays.

Scene JSON schema (version 1):

    {"schema_version": 1,
     "id": str,
     "image": {"inline": <base64 P6 PPM>} | {"path": str},
     "calibration": {"fx","fy","cx","cy",
                     "rotation": [9 reals, row-major],
                     "translation": [3 reals], "width", "height"},
     "radar_sweeps": [{"t": s, "points": [{"x","y","z","vx","vy","rcs"}]}],
     "annotations": [{"class", "center": [3], "size": [3], "yaw"}]}
"""

from __future__ import annotations

import base64
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Box2D,
    Box3D,
    CameraCalibration,
    FORWARD_CAMERA_ROTATION,
    box3d_corners,
    enclosing_box2d,
    planar_distance,
    project_to_image,
)
from .proposals import DEFAULT_ANCHOR_SIZES
from .radar import RadarDetection

SCHEMA_VERSION = 1
DEFAULT_CLASS_SET = frozenset(DEFAULT_ANCHOR_SIZES)


class SceneFormatError(ValueError):
    """Scene JSON violates the schema; message names the offending path."""


@dataclass(frozen=True)
class Annotation:
    class_name: str
    box: Box3D
    velocity: tuple[float, float] | None = None


@dataclass(frozen=True)
class GroundTruth2D:
    box: Box2D
    class_name: str
    distance: float

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("ground-truth distance must be positive")


@dataclass
class Scene:
    id: str
    image: np.ndarray  # (H, W, 3) uint8
    calibration: CameraCalibration
    radar_sweeps: list[tuple[float, list[RadarDetection]]]
    annotations: list[Annotation]
    image_path: str | None = None  # serialize by reference when set
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        h, w = self.image.shape[:2]
        if (w, h) != (self.calibration.width, self.calibration.height):
            raise ValueError("calibration image_size does not match image dimensions")


# ---------------------------------------------------------------------------
# PPM image I/O (portable pixel-map, binary P6)


def encode_ppm(image: np.ndarray) -> bytes:
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P6"):
        raise ValueError("not a binary PPM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only maxval 255 PPM supported")
    return np.frombuffer(data[pos : pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return decode_ppm(path.read_bytes())
    from PIL import Image  # only needed for non-PPM references

    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Ground-truth conversion


def nearest_face_distance(box: Box3D) -> float:
    """Planar distance to the closest footprint edge midpoint."""
    corners = box3d_corners(box)[:4, :2]
    dists = []
    for i in range(4):
        mid = (corners[i] + corners[(i + 1) % 4]) / 2.0
        dists.append(planar_distance((mid[0], mid[1], 0.0)))
    return min(dists)


def convert_annotations(scene: Scene, nearest_face: bool = False) -> list[GroundTruth2D]:
    """Project 3D annotations to 2D ground truth with distances.

    Distance is measured to the box center by default; the
    ``nearest_face`` flag switches to the closest footprint face.
    Annotations that do not project (behind the camera) are dropped.
    """
    out = []
    for ann in scene.annotations:
        box2d = enclosing_box2d(ann.box, scene.calibration)
        if box2d is None:
            continue
        if nearest_face:
            dist = nearest_face_distance(ann.box)
        else:
            dist = planar_distance(ann.box.center)
        out.append(GroundTruth2D(box=box2d, class_name=ann.class_name, distance=dist))
    return out


# ---------------------------------------------------------------------------
# Scene JSON


def scene_to_dict(scene: Scene) -> dict:
    calib = scene.calibration
    doc = {
        "schema_version": SCHEMA_VERSION,
        "id": scene.id,
        "image": (
            {"path": scene.image_path}
            if scene.image_path is not None
            else {"inline": base64.b64encode(encode_ppm(scene.image)).decode("ascii")}
        ),
        "calibration": {
            "fx": calib.fx,
            "fy": calib.fy,
            "cx": calib.cx,
            "cy": calib.cy,
            "rotation": [float(v) for v in calib.rotation.reshape(-1)],
            "translation": [float(v) for v in calib.translation],
            "width": calib.width,
            "height": calib.height,
        },
        "radar_sweeps": [
            {
                "t": t,
                "points": [
                    {
                        "x": d.position[0],
                        "y": d.position[1],
                        "z": d.position[2],
                        "vx": d.velocity[0],
                        "vy": d.velocity[1],
                        "rcs": d.rcs,
                    }
                    for d in dets
                ],
            }
            for t, dets in scene.radar_sweeps
        ],
        "annotations": [
            {
                "class": ann.class_name,
                "center": list(ann.box.center),
                "size": list(ann.box.size),
                "yaw": ann.box.yaw,
            }
            for ann in scene.annotations
        ],
    }
    if scene.metadata:
        doc["metadata"] = scene.metadata
    return doc


def write_scene(scene: Scene, path) -> None:
    text = json.dumps(scene_to_dict(scene), indent=1)
    _atomic_write_text(Path(path), text)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _require(doc, key, json_path):
    if not isinstance(doc, dict) or key not in doc:
        raise SceneFormatError(f"missing field at {json_path}/{key}")
    return doc[key]


def scene_from_dict(doc: dict, base_dir=None, class_set=DEFAULT_CLASS_SET) -> Scene:
    if _require(doc, "schema_version", "") != SCHEMA_VERSION:
        raise SceneFormatError("unsupported schema_version at /schema_version")
    scene_id = _require(doc, "id", "")
    image_doc = _require(doc, "image", "")
    image_path = None
    if "inline" in image_doc:
        image = decode_ppm(base64.b64decode(image_doc["inline"]))
    elif "path" in image_doc:
        image_path = image_doc["path"]
        full = Path(base_dir or ".") / image_path
        image = read_image(full)
    else:
        raise SceneFormatError("missing field at /image/inline or /image/path")

    c = _require(doc, "calibration", "")
    try:
        calib = CameraCalibration(
            fx=float(_require(c, "fx", "/calibration")),
            fy=float(_require(c, "fy", "/calibration")),
            cx=float(_require(c, "cx", "/calibration")),
            cy=float(_require(c, "cy", "/calibration")),
            rotation=np.array(_require(c, "rotation", "/calibration"), dtype=float).reshape(3, 3),
            translation=np.array(_require(c, "translation", "/calibration"), dtype=float),
            width=int(_require(c, "width", "/calibration")),
            height=int(_require(c, "height", "/calibration")),
        )
    except ValueError as exc:
        raise SceneFormatError(f"invalid value at /calibration: {exc}") from exc

    sweeps = []
    for i, sweep in enumerate(_require(doc, "radar_sweeps", "")):
        t = float(_require(sweep, "t", f"/radar_sweeps/{i}"))
        points = []
        for j, pt in enumerate(_require(sweep, "points", f"/radar_sweeps/{i}")):
            jp = f"/radar_sweeps/{i}/points/{j}"
            try:
                points.append(
                    RadarDetection(
                        position=(float(_require(pt, "x", jp)), float(_require(pt, "y", jp)), float(_require(pt, "z", jp))),
                        velocity=(float(pt.get("vx", 0.0)), float(pt.get("vy", 0.0))),
                        rcs=float(pt.get("rcs", 0.0)),
                        timestamp=t,
                    )
                )
            except ValueError as exc:
                raise SceneFormatError(f"invalid radar point at {jp}: {exc}") from exc
        sweeps.append((t, points))

    annotations = []
    for i, ann in enumerate(_require(doc, "annotations", "")):
        ap = f"/annotations/{i}"
        name = _require(ann, "class", ap)
        if class_set is not None and name not in class_set:
            raise SceneFormatError(f"unknown class {name!r} at {ap}/class")
        try:
            box = Box3D(
                center=tuple(float(v) for v in _require(ann, "center", ap)),
                size=tuple(float(v) for v in _require(ann, "size", ap)),
                yaw=float(_require(ann, "yaw", ap)),
            )
        except ValueError as exc:
            raise SceneFormatError(f"invalid annotation at {ap}: {exc}") from exc
        velocity = tuple(ann["velocity"]) if "velocity" in ann else None
        annotations.append(Annotation(class_name=name, box=box, velocity=velocity))

    return Scene(
        id=scene_id,
        image=image,
        calibration=calib,
        radar_sweeps=sweeps,
        annotations=annotations,
        image_path=image_path,
        metadata=doc.get("metadata", {}),
    )


def read_scene(path, class_set=DEFAULT_CLASS_SET) -> Scene:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: invalid JSON: {exc}") from exc
    return scene_from_dict(doc, base_dir=path.parent, class_set=class_set)


# ---------------------------------------------------------------------------
# Synthetic scenes

CLASS_COLORS = {
    "car": (200, 50, 50),
    "truck": (60, 200, 60),
    "person": (60, 80, 220),
    "bus": (210, 210, 60),
    "bicycle": (200, 60, 200),
    "motorcycle": (60, 200, 200),
}

DEFAULT_CAMERA_HEIGHT = 1.5


@dataclass(frozen=True)
class SyntheticParams:
    image_size: tuple[int, int] = (256, 128)  # (width, height)
    focal: float = 160.0
    object_count: tuple[int, int] = (1, 4)
    distance_range: tuple[float, float] = (10.0, 35.0)
    class_mix: dict = field(
        default_factory=lambda: {"car": 1.0, "person": 1.0, "bicycle": 1.0, "motorcycle": 1.0}
    )
    object_sizes: dict = field(default_factory=lambda: dict(DEFAULT_ANCHOR_SIZES))
    sigma_pos: float = 0.0
    sigma_dist: float = 0.0
    dropout: float = 0.0
    clutter_rate: float = 0.0
    max_placement_tries: int = 40


def make_forward_calibration(width: int, height: int, focal: float, camera_height: float = DEFAULT_CAMERA_HEIGHT) -> CameraCalibration:
    rot = FORWARD_CAMERA_ROTATION
    center = np.array([0.0, 0.0, camera_height])
    return CameraCalibration(
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        rotation=rot,
        translation=-rot @ center,
        width=width,
        height=height,
    )


def _fully_visible(box: Box3D, calib: CameraCalibration, margin: float = 2.0) -> bool:
    for corner in box3d_corners(box):
        uv = project_to_image(corner, calib)
        if uv is None:
            return False
        u, v = uv
        if not (margin <= u <= calib.width - margin and margin <= v <= calib.height - margin):
            return False
    return True


def _nearest_face_midpoint(box: Box3D) -> tuple[float, float]:
    corners = box3d_corners(box)[:4, :2]
    best = None
    best_d = math.inf
    for i in range(4):
        mid = (corners[i] + corners[(i + 1) % 4]) / 2.0
        d = math.hypot(mid[0], mid[1])
        if d < best_d:
            best_d = d
            best = mid
    return float(best[0]), float(best[1])


def generate_synthetic_scene(seed: int, params: SyntheticParams = SyntheticParams(), scene_id: str | None = None) -> Scene:
    """Deterministic flat-shaded scene with radar returns at object edges.

    Radar returns are placed at the nearest visible face midpoint plus
    Gaussian noise, reproducing the edge-vs-center distance bias of real
    automotive radar.
    """
    rng = np.random.default_rng(seed)
    width, height = params.image_size
    calib = make_forward_calibration(width, height, params.focal)

    classes = sorted(params.class_mix)
    weights = np.array([params.class_mix[c] for c in classes], dtype=float)
    weights /= weights.sum()

    lo, hi = params.object_count
    n_target = int(rng.integers(lo, hi + 1))
    max_bearing = math.atan((width / 2.0) / params.focal)

    objects: list[Annotation] = []
    shortfall = 0
    for _ in range(n_target):
        placed = False
        for _ in range(params.max_placement_tries):
            cls = classes[int(rng.choice(len(classes), p=weights))]
            w, l, h = params.object_sizes[cls]
            r = float(rng.uniform(*params.distance_range))
            bearing = float(rng.uniform(-0.8 * max_bearing, 0.8 * max_bearing))
            yaw = float(rng.choice([0.0, math.pi / 2.0]))
            box = Box3D(
                center=(r * math.cos(bearing), r * math.sin(bearing), h / 2.0),
                size=(w, l, h),
                yaw=yaw,
            )
            if not _fully_visible(box, calib):
                continue
            clear = True
            for other in objects:
                sep = math.hypot(box.center[0] - other.box.center[0], box.center[1] - other.box.center[1])
                min_sep = (math.hypot(w, l) + math.hypot(other.box.size[0], other.box.size[1])) / 2.0 + 0.5
                if sep < min_sep:
                    clear = False
                    break
            if clear:
                objects.append(Annotation(class_name=cls, box=box))
                placed = True
                break
        if not placed:
            shortfall += 1

    # image: noisy background, then objects far to near
    image = rng.integers(40, 80, size=(height, width, 3)).astype(np.uint8)
    order = sorted(objects, key=lambda a: -planar_distance(a.box.center))
    for ann in order:
        box2d = enclosing_box2d(ann.box, calib)
        if box2d is None:
            continue
        x1, y1 = int(round(box2d.x1)), int(round(box2d.y1))
        x2, y2 = max(int(round(box2d.x2)), x1 + 1), max(int(round(box2d.y2)), y1 + 1)
        color = np.array(CLASS_COLORS.get(ann.class_name, (128, 128, 128)), dtype=float)
        patch_shape = (y2 - y1, x2 - x1, 3)
        texture = rng.integers(-15, 16, size=patch_shape)
        image[y1:y2, x1:x2, :] = np.clip(color[None, None, :] + texture, 0, 255).astype(np.uint8)

    detections = []
    for ann in objects:
        if rng.uniform() < params.dropout:
            continue
        x, y = _nearest_face_midpoint(ann.box)
        if params.sigma_pos > 0:
            x += rng.normal(0.0, params.sigma_pos)
            y += rng.normal(0.0, params.sigma_pos)
        if params.sigma_dist > 0:
            r = math.hypot(x, y)
            if r > 0:
                shift = rng.normal(0.0, params.sigma_dist)
                x += shift * x / r
                y += shift * y / r
        detections.append(
            RadarDetection(
                position=(x, y, 0.0),
                velocity=(0.0, 0.0),
                rcs=float(rng.uniform(5.0, 15.0)),
                timestamp=0.0,
            )
        )
    n_clutter = int(rng.poisson(params.clutter_rate))
    for _ in range(n_clutter):
        r = float(rng.uniform(5.0, 45.0))
        bearing = float(rng.uniform(-max_bearing, max_bearing))
        detections.append(
            RadarDetection(
                position=(r * math.cos(bearing), r * math.sin(bearing), 0.0),
                velocity=(0.0, 0.0),
                rcs=float(rng.uniform(0.0, 5.0)),
                timestamp=0.0,
            )
        )

    metadata = {"seed": int(seed)}
    if shortfall:
        metadata["placement_shortfall"] = shortfall
    return Scene(
        id=scene_id if scene_id is not None else f"synth-{seed:06d}",
        image=image,
        calibration=calib,
        radar_sweeps=[(0.0, detections)],
        annotations=objects,
        metadata=metadata,
    )


# ---------------------------------------------------------------------------
# Overlay rendering

_FONT = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
    ".": ("000", "000", "000", "000", "010"),
}


def _draw_text(image, text, x, y, color):
    h, w = image.shape[:2]
    cx = x
    for ch in text:
        glyph = _FONT.get(ch)
        if glyph is None:
            cx += 4
            continue
        for gy, row in enumerate(glyph):
            for gx, bit in enumerate(row):
                if bit == "1" and 0 <= y + gy < h and 0 <= cx + gx < w:
                    image[y + gy, cx + gx] = color
        cx += 4


def _draw_rect(image, box: Box2D, color):
    h, w = image.shape[:2]
    x1 = int(np.clip(round(box.x1), 0, w - 1))
    y1 = int(np.clip(round(box.y1), 0, h - 1))
    x2 = int(np.clip(round(box.x2), 0, w - 1))
    y2 = int(np.clip(round(box.y2), 0, h - 1))
    image[y1, x1 : x2 + 1] = color
    image[y2, x1 : x2 + 1] = color
    image[y1 : y2 + 1, x1] = color
    image[y1 : y2 + 1, x2] = color
    return x1, y1


def render_overlay(scene: Scene, items, path) -> None:
    """Write a PPM with boxes, per-box distance text and radar dots.

    ``items`` may be detections, proposals or GroundTruth2D objects:
    anything with a ``box`` and a ``distance``.  Ground truth renders
    green, radar-sourced boxes red, everything else blue.
    """
    image = scene.image.copy()
    h, w = image.shape[:2]
    for _, dets in scene.radar_sweeps:
        for det in dets:
            uv = project_to_image(det.position, scene.calibration)
            if uv is None:
                continue
            u, v = int(round(uv[0])), int(round(uv[1]))
            if 1 <= u < w - 1 and 1 <= v < h - 1:
                image[v - 1 : v + 2, u - 1 : u + 2] = (255, 120, 0)
    for item in items:
        source = getattr(item, "source", None)
        if isinstance(item, GroundTruth2D):
            color = (0, 255, 0)
        elif source is not None and "radar" in str(source):
            color = (255, 0, 0)
        else:
            color = (0, 128, 255)
        x1, y1 = _draw_rect(image, item.box, color)
        _draw_text(image, f"{item.distance:.1f}", x1 + 2, y1 + 2, (255, 255, 255))
    Path(path).write_bytes(encode_ppm(image))
