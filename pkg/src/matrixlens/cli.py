"""Command-line driver for generation, preprocessing, detection,
reconstruction, evaluation, tracing, rendering, and the HTTP service.

Every subcommand exits nonzero with a single `error: <message>` line on the
first failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import calctrace, datagen, gridseg, metrics, render
from .atlas import builtin_atlas, load_symbol_atlas
from .detect import DetectionSet, format_exchange, parse_exchange, plug_detector
from .imgproc import preprocess
from .matrix import MatrixValue


def _load_matrix_file(path: str) -> MatrixValue:
    data = json.loads(Path(path).read_text())
    values = data["values"] if isinstance(data, dict) else data
    return MatrixValue.from_lists(values)


def _parse_range(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) == 1:
        v = int(parts[0])
        return (v, v)
    return (int(parts[0]), int(parts[1]))


def cmd_gen(args: argparse.Namespace) -> int:
    if args.config:
        cfg = datagen.GenConfig.from_dict(json.loads(Path(args.config).read_text()))
        if args.seed is not None:
            cfg.seed = args.seed
    else:
        cfg = datagen.GenConfig(
            rows=_parse_range(args.rows),
            cols=_parse_range(args.cols),
            noise_level=args.noise,
            jitter_px=args.jitter,
            seed=args.seed if args.seed is not None else 0,
        )
    atlas = load_symbol_atlas(args.atlas) if args.atlas else builtin_atlas()
    manifest = datagen.generate_dataset(cfg, atlas, args.count, args.out)
    print(json.dumps(manifest["counts"]))
    return 0


def cmd_prep(args: argparse.Namespace) -> int:
    with Image.open(args.image) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
    dump = args.out if args.dump_stages else None
    result = preprocess(pixels, dump_dir=dump)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(result.roi).save(out_dir / "roi.png")
    print(json.dumps({"rect": list(result.rect), "corners": len(result.corners)}))
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    handle = plug_detector(args.detector)
    dset = handle.detect(args.image)
    text = format_exchange(dset)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    dets = parse_exchange(Path(args.detections).read_text())
    if args.image:
        with Image.open(args.image) as im:
            frame = im.size
    else:
        frame = (args.width, args.height)
        if not frame[0] or not frame[1]:
            raise ValueError("reconstruct needs --image or --width/--height for frame size")
    dset = DetectionSet(dets, frame, normalized=True).to_pixels()
    report = gridseg.reconstruct(dset)
    if args.out:
        gridseg.write_report(report, args.out)
    if args.overlay:
        if not args.image:
            raise ValueError("--overlay needs --image")
        with Image.open(args.image) as im:
            pixels = np.asarray(im.convert("L"), dtype=np.uint8)
        gridseg.write_overlay(pixels, report, args.overlay)
    print(json.dumps(report.to_dict()["values"]))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    pred_dir = Path(args.predictions)
    truth_dir = Path(args.truth)
    truths_by_image: dict[str, list] = {}
    preds_by_image: dict[str, list] = {}
    for truth_file in sorted(truth_dir.glob("*.txt")):
        truths_by_image[truth_file.stem] = datagen.parse_annotation(truth_file.read_text())
        pred_file = pred_dir / truth_file.name
        preds_by_image[truth_file.stem] = (
            parse_exchange(pred_file.read_text()) if pred_file.is_file() else []
        )
    if not truths_by_image:
        raise ValueError(f"no truth label files in {truth_dir}")
    thresholds = [float(t) for t in args.thresholds.split(",")]
    report = metrics.evaluate_detections(preds_by_image, truths_by_image, thresholds)
    if args.out:
        metrics.write_report(report, args.out)
    print(json.dumps({"map": report["map"], "map_mean": report["map_mean"]}))
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    a = _load_matrix_file(args.a)
    b = _load_matrix_file(args.b) if args.b else None
    trace = calctrace.build_trace(args.mode, a, b)
    report = calctrace.verify_trace(trace)
    if not report.passed:
        raise ValueError("trace failed verification")
    text = calctrace.trace_to_json(trace)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text + "\n")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    trace = calctrace.trace_from_json(Path(args.trace).read_text())
    style = render.Style.from_file(args.style) if args.style else render.Style()
    fplan = render.plan(trace, style, fps=args.fps)
    want_png = args.png or args.video
    manifest = render.render_sequence(fplan, args.out, png=want_png)
    if args.video:
        encoded = render.encode(manifest, encoder=args.encoder)
        manifest["video"] = encoded
    print(json.dumps({"frames": manifest["frame_count"],
                      "video": manifest.get("video", {}).get("status") if args.video else None}))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    style = render.Style.from_file(args.style) if args.style else None
    app = create_app(args.workspace, detector=args.detector, style=style,
                     ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matrixlens",
                                     description="Handwritten-matrix pipeline toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an annotated synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="GenConfig JSON file")
    p.add_argument("--rows", default="1,4", help="row count or min,max")
    p.add_argument("--cols", default="1,4", help="column count or min,max")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--jitter", type=int, default=2)
    p.add_argument("--atlas", help="sprite atlas directory (default: built-in glyphs)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("prep", help="preprocess a photo into a binarized ROI")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-stages", action="store_true")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("detect", help="run a detector over an image")
    p.add_argument("--image", required=True)
    p.add_argument("--detector", default="oracle", help='"oracle" or "file:<label dir>"')
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("reconstruct", help="rebuild a matrix from detections")
    p.add_argument("--detections", required=True, help="detection exchange file")
    p.add_argument("--image", help="source image (frame size + overlay base)")
    p.add_argument("--width", type=int, default=0)
    p.add_argument("--height", type=int, default=0)
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--overlay", help="split-line overlay PNG path")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="score predictions against truth labels")
    p.add_argument("--predictions", required=True, help="directory of exchange files")
    p.add_argument("--truth", required=True, help="directory of YOLO label files")
    p.add_argument("--thresholds", default="0.5", help="comma-separated IoU thresholds")
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="build a verified calculation trace")
    p.add_argument("--mode", required=True, choices=("det", "add", "mul"))
    p.add_argument("--a", required=True, help="matrix JSON file")
    p.add_argument("--b", help="second matrix JSON file")
    p.add_argument("--out", help="trace JSON path")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("render", help="render a trace to SVG frames / video")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=int, default=None)
    p.add_argument("--style", help="style JSON file")
    p.add_argument("--png", action="store_true", help="also write PNG mirrors")
    p.add_argument("--video", action="store_true", help="encode an MP4 via the external encoder")
    p.add_argument("--encoder", help="encoder binary (default: $MATRIXLENS_ENCODER or ffmpeg)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("serve", help="run the HTTP service over a workspace")
    p.add_argument("--workspace", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--detector", default="oracle")
    p.add_argument("--style", help="style JSON file")
    p.add_argument("--ui", help="static web UI directory to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single-line machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
