"""Command line front end.

Subcommands: convert, score, segment, refine, roi, render, serve, watch.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import VolumeCatalog
from .crf import CrfParams, mean_field_refine
from .kmeans import kmeans_segment
from .metrics import score_masks
from .nifti import parse_nifti_file
from .orchestrator import ConsoleSink, WatchConfig, WebhookSink, watch_loop
from .rawio import read_raw_sidecar, sidecar_path_for, write_raw_sidecar
from .render import Camera, SceneState, build_transfer_function, render_frame, write_ppm
from .roi import (
    agreement_filter,
    classify_box,
    crop_roi,
    fit_slice_gaussian,
    place_detector_boxes,
    select_slice_range,
)
from .stream.protocol import ServerConfig
from .stream.signaling import PeerRegistry, SignalingServer
from .stream.session import RenderServer
from .volume import IntensityKind, Volume3D, WindowLevel, clip_and_normalize


def _load_volume(path: str):
    p = Path(path)
    if p.suffix == ".nii":
        return parse_nifti_file(p)
    return read_raw_sidecar(p, sidecar_path_for(p))


def cmd_convert(args) -> int:
    vol = parse_nifti_file(args.input)
    if args.normalize:
        lo, hi = args.normalize
        vol = clip_and_normalize(vol, lo, hi)
    raw = Path(args.output)
    write_raw_sidecar(vol, raw, sidecar_path_for(raw))
    print(f"wrote {raw} ({vol.dims[0]}x{vol.dims[1]}x{vol.dims[2]})")
    return 0


def cmd_score(args) -> int:
    pred = _load_volume(args.pred)
    truth = _load_volume(args.truth)
    if args.per_slice:
        report = []
        for i in range(pred.nz):
            s = score_masks(pred.voxels[i], truth.voxels[i])
            report.append({"slice": i, "precision": s.precision, "recall": s.recall, "dice": s.f1})
        print(json.dumps(report, indent=2))
    else:
        s = score_masks(pred.voxels, truth.voxels)
        print(json.dumps({"precision": s.precision, "recall": s.recall, "dice": s.f1}, indent=2))
    return 0


def cmd_segment(args) -> int:
    if args.method != "kmeans":
        print(f"unknown method {args.method}", file=sys.stderr)
        return 2
    vol = _load_volume(args.input)
    result = kmeans_segment(vol, k=args.k)
    out = Path(args.output)
    labels = Volume3D(result.labels.astype(np.uint8), vol.spacing, IntensityKind.UINT8)
    write_raw_sidecar(labels, out, sidecar_path_for(out))
    print(
        f"k={args.k} converged={result.converged} iterations={result.iterations} "
        f"centroids={[round(float(c), 3) for c in result.centroids]}"
    )
    return 0


def cmd_refine(args) -> int:
    params = CrfParams.from_json(Path(args.params).read_text()) if args.params else CrfParams()
    prob = _load_volume(args.prob)
    intensity = _load_volume(args.intensity)
    labels, _ = mean_field_refine(prob.voxels.astype(np.float64), intensity, params)
    out = Path(args.output)
    mask = Volume3D(labels.astype(np.uint8), intensity.spacing, IntensityKind.UINT8)
    write_raw_sidecar(mask, out, sidecar_path_for(out))
    print(f"wrote {out} ({int(labels.sum())} foreground voxels)")
    return 0


def cmd_roi(args) -> int:
    mask = _load_volume(args.mask)
    if args.action == "fit":
        fit = fit_slice_gaussian(mask.voxels)
        lo, hi = select_slice_range(fit, mask.nz, args.k_sigma)
        print(
            json.dumps(
                {
                    "mean": fit.mean,
                    "variance": fit.variance,
                    "total_positive": fit.total_positive,
                    "slice_range": [lo, hi],
                }
            )
        )
    elif args.action == "crop":
        vol = _load_volume(args.volume)
        cropped, box = crop_roi(vol.voxels, mask.voxels, args.margin)
        out = Path(args.output)
        write_raw_sidecar(
            Volume3D(cropped, vol.spacing, vol.intensity_kind), out, sidecar_path_for(out)
        )
        print(json.dumps({"min": list(box.min_corner), "max": list(box.max_corner)}))
    elif args.action == "boxes":
        lesion = _load_volume(args.lesion) if args.lesion else None
        result = []
        for i in range(mask.nz):
            boxes = place_detector_boxes(mask.voxels[i], slice_index=i)
            for b in boxes:
                if lesion is not None:
                    classify_box(b, lesion.voxels[i])
                result.append({"slice": b.slice_index, "x": b.x, "y": b.y, "verdict": b.verdict})
        print(json.dumps(result))
    elif args.action == "filter":
        lesion = _load_volume(args.lesion)
        boxes = []
        for i in range(mask.nz):
            for b in place_detector_boxes(mask.voxels[i], slice_index=i):
                boxes.append(classify_box(b, lesion.voxels[i]))
        kept = agreement_filter(lesion.voxels, boxes)
        out = Path(args.output)
        write_raw_sidecar(
            Volume3D(kept.astype(np.uint8), lesion.spacing, IntensityKind.UINT8),
            out,
            sidecar_path_for(out),
        )
        print(f"kept {int(np.count_nonzero(kept))} of {int(np.count_nonzero(lesion.voxels))} voxels")
    return 0


def cmd_render(args) -> int:
    vol = _load_volume(args.nii)
    px, py, pz, qx, qy, qz, qw = (float(v) for v in args.cam.split(","))
    width, height = (int(v) for v in args.size.lower().split("x"))
    level, wwidth = (float(v) for v in args.window.split(","))
    scene = SceneState(volume=vol, transfer=build_transfer_function(WindowLevel(level, wwidth)))
    cam = Camera(position=(px, py, pz), rotation=(qx, qy, qz, qw), view_extent_mm=args.extent)
    frame = render_frame(scene, cam, width, height)
    write_ppm(frame, args.out)
    print(f"wrote {args.out} ({width}x{height})")
    return 0


def cmd_serve(args) -> int:
    config = ServerConfig.from_json(Path(args.config).read_text()) if args.config else ServerConfig(
        signal_port=9754, stream_port=9755
    )
    catalog = VolumeCatalog(args.catalog)

    async def serve():
        registry = PeerRegistry(config.max_peers, config.heartbeat_timeout_s)
        signaling = SignalingServer(registry, config.signal_host, config.signal_port)
        await signaling.start()
        server = RenderServer(config, catalog)
        await server.start(signaling)
        print(f"signaling on {signaling.endpoint}, stream on {server.stream_endpoint}")
        try:
            await asyncio.Event().wait()
        finally:
            await server.stop()
            await signaling.stop()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        pass
    return 0


def cmd_watch(args) -> int:
    cfg = WatchConfig.from_json(Path(args.config).read_text())
    sinks = [ConsoleSink()]
    if args.webhook:
        sinks.append(WebhookSink(args.webhook))
    try:
        watch_loop(cfg, sinks)
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxpipe", description=__doc__)
    parser.add_argument("--version", action="version", version=f"voxpipe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="NIfTI to raw+sidecar")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--normalize", nargs=2, type=float, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("score", help="compare two masks")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--per-slice", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("segment", help="cluster a volume")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--method", default="kmeans")
    p.add_argument("--k", type=int, default=4)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("refine", help="CRF-refine a probability volume")
    p.add_argument("prob")
    p.add_argument("intensity")
    p.add_argument("output")
    p.add_argument("--params", help="CRF params JSON file")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("roi", help="ROI utilities")
    p.add_argument("action", choices=["fit", "crop", "boxes", "filter"])
    p.add_argument("mask", help="liver mask raw file")
    p.add_argument("--volume", help="intensity volume for crop")
    p.add_argument("--lesion", help="lesion mask for boxes/filter")
    p.add_argument("--output", help="output raw path")
    p.add_argument("--margin", type=int, default=10)
    p.add_argument("--k-sigma", type=float, default=2.0)
    p.set_defaults(func=cmd_roi)

    p = sub.add_parser("render", help="render one frame to PPM")
    p.add_argument("--nii", required=True)
    p.add_argument("--cam", required=True, metavar="px,py,pz,qx,qy,qz,qw")
    p.add_argument("--size", default="512x512", metavar="WxH")
    p.add_argument("--window", default="50,400", metavar="L,W")
    p.add_argument("--extent", type=float, default=400.0, help="orthographic view width (mm)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("serve", help="signaling + streaming render server")
    p.add_argument("--config", help="server config JSON")
    p.add_argument("--catalog", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("watch", help="watch a directory for new scans")
    p.add_argument("--config", required=True)
    p.add_argument("--webhook", help="notification webhook URL")
    p.set_defaults(func=cmd_watch)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
