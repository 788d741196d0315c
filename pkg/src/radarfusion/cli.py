"""Command-line driver: generate, train, detect, eval, render, gradcheck, sweep.

All subcommands are reproducible: the same config and seed produce
byte-identical outputs.  A single JSON config file carries per-command
sections; flags override the config and --seed overrides both.  The
config path may also come from the RADARFUSION_CONFIG environment
variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, evalkit
from .checks import run_all
from .dataio import (
    Scene,
    SceneFormatError,
    SyntheticParams,
    convert_annotations,
    generate_synthetic_scene,
    read_scene,
    render_overlay,
    write_scene,
)
from .geometry import Box2D
from .neural import ParamBlock
from .pipeline import Detection, FusionModel, PipelineConfig, detect, train
from .proposals import Source

CONFIG_ENV = "RADARFUSION_CONFIG"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_config(args) -> dict:
    path = args.config or os.environ.get(CONFIG_ENV)
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneFormatError(f"config {path}: {exc}") from exc


def _pipeline_config(config: dict, args) -> PipelineConfig:
    cfg = PipelineConfig.from_dict(config.get("pipeline", {}))
    if getattr(args, "seed", None) is not None:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _synthetic_params(config: dict) -> SyntheticParams:
    doc = dict(config.get("generate", {}).get("params", {}))
    kwargs = {}
    for key in (
        "image_size",
        "focal",
        "object_count",
        "distance_range",
        "class_mix",
        "object_sizes",
        "sigma_pos",
        "sigma_dist",
        "dropout",
        "clutter_rate",
    ):
        if key in doc:
            value = doc[key]
            if isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
    return SyntheticParams(**kwargs)


def _scene_paths(directory: str) -> list[Path]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise SceneFormatError(f"no scene files under {directory}")
    return paths


def detections_to_json(scene_id: str, detections: list[Detection]) -> str:
    rows = [
        {
            "scene_id": scene_id,
            "class": d.class_name,
            "score": d.score,
            "box": [d.box.x1, d.box.y1, d.box.x2, d.box.y2],
            "distance": d.distance,
            "source": d.source.value,
        }
        for d in detections
    ]
    return json.dumps(rows, indent=1)


def detections_from_json(text: str) -> list[Detection]:
    out = []
    for row in json.loads(text):
        out.append(
            Detection(
                box=Box2D(*row["box"]),
                class_name=row["class"],
                score=row["score"],
                distance=row["distance"],
                source=Source(row.get("source", "image")),
            )
        )
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    config = _load_config(args)
    params = _synthetic_params(config)
    count = args.count if args.count is not None else config.get("generate", {}).get("count", 10)
    seed = args.seed if args.seed is not None else config.get("generate", {}).get("seed", 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        scene = generate_synthetic_scene(seed + i, params)
        write_scene(scene, out / f"{scene.id}.json")
    print(f"wrote {count} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    cfg = _pipeline_config(config, args)
    scenes = [read_scene(p) for p in _scene_paths(args.scenes)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, params, losses = train(scenes, cfg, log=print)
    params.save(out / "checkpoint.json")
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["epoch", "loss"])
    for i, loss in enumerate(losses):
        writer.writerow([i + 1, repr(loss)])
    _atomic_write(out / "loss_log.csv", buf.getvalue())
    _atomic_write(out / "config_used.json", json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    print(f"checkpoint written to {out / 'checkpoint.json'}")
    return 0


def _detect_one(scene_path: str, cfg_doc: dict, checkpoint: str) -> tuple[str, str]:
    cfg = PipelineConfig.from_dict(cfg_doc)
    model = FusionModel(cfg)
    params = ParamBlock.load(checkpoint)
    scene = read_scene(scene_path)
    dets = detect(scene, model, params, cfg)
    return scene.id, detections_to_json(scene.id, dets)


def cmd_detect(args) -> int:
    config = _load_config(args)
    cfg = _pipeline_config(config, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = _scene_paths(args.scenes)
    cfg_doc = cfg.to_dict()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(
                pool.map(_detect_one, [str(p) for p in paths], [cfg_doc] * len(paths), [args.checkpoint] * len(paths))
            )
    else:
        results = [_detect_one(str(p), cfg_doc, args.checkpoint) for p in paths]
    for scene_id, text in results:
        _atomic_write(out / f"{scene_id}.detections.json", text)
    print(f"wrote detections for {len(results)} scenes to {out}")
    return 0


def _load_results(scenes_dir: str, detections_dir: str):
    results = []
    for path in _scene_paths(scenes_dir):
        scene = read_scene(path)
        gts = convert_annotations(scene)
        det_path = Path(detections_dir) / f"{scene.id}.detections.json"
        dets = detections_from_json(det_path.read_text()) if det_path.exists() else []
        results.append((scene, dets, gts))
    return results


def cmd_eval(args) -> int:
    results = _load_results(args.scenes, args.detections)
    report = evalkit.evaluate([(dets, gts) for _, dets, gts in results])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "report.json", report.to_json())
    table = report.render_table()
    _atomic_write(out / "report.txt", table + "\n")
    print(table)
    return 0


def cmd_render(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in _scene_paths(args.scenes):
        scene = read_scene(path)
        if args.gt or args.detections is None:
            items = convert_annotations(scene)
        else:
            det_path = Path(args.detections) / f"{scene.id}.detections.json"
            items = detections_from_json(det_path.read_text()) if det_path.exists() else []
        render_overlay(scene, items, out / f"{scene.id}.ppm")
    print(f"overlays written to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    seeds = tuple(seed + i for i in range(5))
    all_ok = True
    for name, s, report in run_all(seeds):
        status = "PASS" if report.passed else "FAIL"
        print(
            f"{status} {name} seed={s} max_rel_error={report.max_rel_error:.3e} "
            f"(tolerance {report.tolerance:.0e}, {report.checked} entries, worst {report.worst_param})"
        )
        all_ok = all_ok and report.passed
    return 0 if all_ok else 2


def cmd_sweep(args) -> int:
    config = _load_config(args)
    cfg = _pipeline_config(config, args)
    sweep_cfg = config.get("sweep", {})
    match_grid = sweep_cfg.get("match_grid", [0.3, 0.5, 0.7])
    nms_grid = sweep_cfg.get("nms_grid", [0.3, 0.5, 0.7])
    paths = _scene_paths(args.scenes)
    scenes = [read_scene(p) for p in paths]
    params = ParamBlock.load(args.checkpoint)
    base = cfg.to_dict()
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["match_iou", "nms_iou", "AP", "AP50", "MAE"])
    for match_iou in match_grid:
        for nms_iou in nms_grid:
            doc = dict(base)
            doc["merge"] = {**base["merge"], "match_iou": match_iou, "nms_iou": nms_iou}
            run_cfg = PipelineConfig.from_dict(doc)
            model = FusionModel(run_cfg)
            pairs = []
            for scene in scenes:
                dets = detect(scene, model, params, run_cfg)
                pairs.append((dets, convert_annotations(scene)))
            report = evalkit.evaluate(pairs)

            def cell(v, s=100.0):
                return "" if v is None else f"{s * v:.4f}"

            writer.writerow([match_iou, nms_iou, cell(report.ap), cell(report.ap50), cell(report.mae, 1.0)])
    _atomic_write(Path(args.out), buf.getvalue())
    print(f"sweep results written to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radarfusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help=f"JSON config file (or ${CONFIG_ENV})")
        p.add_argument("--seed", type=int, help="seed override")

    p = sub.add_parser("generate", help="write synthetic scenes")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a checkpoint on a scene directory")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("detect", help="run the pipeline over scenes")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("eval", help="score detections against ground truth")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("render", help="write overlay images")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--detections")
    p.add_argument("--gt", action="store_true", help="render ground truth instead of detections")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("gradcheck", help="finite-difference gradient report")
    common(p)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep", help="grid over merge thresholds, CSV output")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except SceneFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
