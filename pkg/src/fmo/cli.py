"""Command line front end.

Exit codes: 0 success, 2 bad input, 3 solver failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import deblur as db
from . import detect, evaluation, fileio, pipeline, redetect, synth, track
from .fileio import BadInput

log = logging.getLogger("fmo")

EXIT_OK, EXIT_BAD_INPUT, EXIT_SOLVER = 0, 2, 3


class Settings:
    """All tunables, grouped by the component that reads them."""

    def __init__(self):
        self.pipeline = pipeline.PipelineConfig()
        self.detector = detect.DetectorConfig()
        self.redetector = redetect.RedetectConfig()
        self.tracker = track.TrackerConfig()
        self.deblur = db.DeblurConfig()

    def targets(self):
        return [self.pipeline, self.detector, self.redetector, self.tracker, self.deblur]


def _triple(text):
    try:
        v = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected r,g,b, got {text!r}") from None
    if len(v) != 3 or not all(0 <= c <= 1 for c in v):
        raise argparse.ArgumentTypeError("expected three values in [0, 1]")
    return v


def _add_globals(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="key=value file of config fields")
    p.add_argument("--no-stabilize", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="skip camera-motion compensation")
    p.add_argument("--exposure-fraction", type=float, default=d,
                   help="fix the exposure fraction instead of estimating it")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--out", default=d, help="output directory (default: current)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser():
    ap = argparse.ArgumentParser(prog="fmo", description="Fast moving object detection, tracking and deblurring.")
    _add_globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, help):
        p = sub.add_parser(name, help=help)
        _add_globals(p, suppress=True)
        return p

    p = cmd("detect", "localize the object in a frame directory")
    p.add_argument("frames")

    for name, help in (("deblur", "estimate the object appearance in each localized frame"),
                       ("superres", "temporal super-resolution"),
                       ("highlight", "recolor or rescale the object")):
        p = cmd(name, help)
        p.add_argument("frames")
        p.add_argument("--detections", help="detection file (default: run the detector)")
        if name == "deblur":
            p.add_argument("--rotation", action="store_true", help="search for a spinning sphere")
        if name == "superres":
            p.add_argument("--factor", type=int, required=True)
        if name == "highlight":
            g = p.add_mutually_exclusive_group(required=True)
            g.add_argument("--recolor", type=_triple)
            g.add_argument("--scale", type=float)

    p = cmd("synth", "render a synthetic sequence from a scene file")
    p.add_argument("scenespec")

    p = cmd("eval", "precision / recall of detections against annotations")
    p.add_argument("detections")
    p.add_argument("annotations")
    p.add_argument("--iou", type=float, default=0.5)

    p = cmd("stats", "speed and overlap histograms of an annotation file")
    p.add_argument("annotations")
    return ap


def load_settings(args):
    s = Settings()
    if args.config:
        fileio.apply_config(fileio.read_key_values(args.config), s.targets(), args.config)
    if args.no_stabilize:
        s.pipeline.stabilize = False
    if args.exposure_fraction is not None:
        if not 0 < args.exposure_fraction <= 1:
            raise BadInput("--exposure-fraction must lie in (0, 1]")
        s.pipeline.exposure_fraction = args.exposure_fraction
    if args.seed is not None:
        s.pipeline.seed = args.seed
    return s


def _out_dir(args):
    d = args.out or "."
    os.makedirs(d, exist_ok=True)
    return d


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _run_detect(frames, s):
    try:
        return pipeline.run_pipeline(frames, s.pipeline, s.detector, s.redetector, s.tracker)
    except ValueError as e:
        raise BadInput(str(e)) from None


def _per_frame(frames, args, s):
    """One detection (or None) per frame, from a file or a pipeline run."""
    per = [None] * len(frames)
    if args.detections:
        recs = fileio.parse_detections(fileio.read_text(args.detections), args.detections)
        for t, ds in recs.items():
            if not 0 <= t < len(frames):
                raise BadInput(f"{args.detections}: frame {t} out of range")
            per[t] = ds[0]
    else:
        for rec in _run_detect(frames, s):
            if rec.detections:
                per[rec.t] = rec.detections[0]
    return per


def estimate_appearances(frames, per, cfg, rotation=False):
    """Appearance (and rotation) for every localized frame."""
    apps, rots, objs = [None] * len(frames), [None] * len(frames), [None] * len(frames)
    for t, det in enumerate(per):
        if det is None:
            continue
        I = frames[t]
        B = synth.inpaint_background(frames, per, t)
        pts = db.polyline_points(det.polyline)
        window = db.default_window(pts, det.r, I.shape[:2])
        if rotation:
            res = db.search_rotation(I, B, pts, det.r, cfg, window)
            apps[t], rots[t], objs[t] = res.texture, res.rotation, res.objective
        else:
            op = db.BlurOperator(pts, det.r, window)
            res = db.estimate_appearance(I, B, op, cfg)
            apps[t], objs[t] = res.appearance, res.objective
    return apps, rots, objs


def _appearance_image(app):
    if isinstance(app, db.SphereTexture):
        return app.values
    return np.where(app.mask[..., None], app.values, 0.0)


def cmd_detect(args, s):
    frames = list(fileio.iter_frames(args.frames))
    recs = _run_detect(frames, s)
    out = _out_dir(args)
    _write(os.path.join(out, "detections.txt"),
           fileio.format_detections([(r.t, r.detections) for r in recs]))
    counts = pipeline.summarize(recs)
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_deblur(args, s):
    frames = list(fileio.iter_frames(args.frames))
    per = _per_frame(frames, args, s)
    apps, rots, objs = estimate_appearances(frames, per, s.deblur, args.rotation)
    out = _out_dir(args)
    lines = []
    for t, app in enumerate(apps):
        if app is None:
            continue
        fileio.write_image(os.path.join(out, f"appearance_{t:05d}.ppm"), _appearance_image(app))
        row = [str(t), fileio.fmt(objs[t])]
        if rots[t] is not None:
            row += [fileio.fmt(v) for v in rots[t].axis] + [fileio.fmt(rots[t].omega)]
        lines.append(",".join(row))
    _write(os.path.join(out, "deblur.txt"), "".join(l + "\n" for l in lines))
    print(f"estimated {len(lines)} appearances")
    return EXIT_OK


def cmd_superres(args, s):
    if args.factor < 1:
        raise BadInput("--factor must be >= 1")
    frames = list(fileio.iter_frames(args.frames))
    per = _per_frame(frames, args, s)
    apps, _, _ = estimate_appearances(frames, per, s.deblur)
    res = synth.temporal_superres(frames, per, apps, factor=args.factor)
    fileio.write_frames(_out_dir(args), res.frames)
    print(f"wrote {len(res.frames)} frames ({sum(res.flags)} re-rendered inputs)")
    return EXIT_OK


def cmd_highlight(args, s):
    frames = list(fileio.iter_frames(args.frames))
    per = _per_frame(frames, args, s)
    if args.scale is not None and args.scale <= 0:
        raise BadInput("--scale must be positive")
    out = synth.highlight(frames, per, recolor=args.recolor, scale=args.scale)
    fileio.write_frames(_out_dir(args), out)
    print(f"wrote {len(out)} frames")
    return EXIT_OK


def cmd_synth(args, s):
    spec, seed = fileio.read_scene(args.scenespec)
    if args.seed is not None:
        seed = args.seed
    try:
        frames, truths = synth.render_sequence(spec, seed)
    except synth.OutOfBounds as e:
        raise BadInput(f"{args.scenespec}: {e}") from None
    out = _out_dir(args)
    fileio.write_frames(out, frames)
    ann = {tr.index: [tr.polygon] for tr in truths if tr.polygon is not None}
    _write(os.path.join(out, "annotations.txt"), fileio.format_annotations(ann))
    print(f"wrote {len(frames)} frames")
    return EXIT_OK


def _det_regions(dets):
    from .imgcore import PolyRegion
    return {t: [PolyRegion(points=synth.stadium_polygon(d.polyline, d.r)) for d in ds]
            for t, ds in dets.items()}


def cmd_eval(args, s):
    dets = fileio.parse_detections(fileio.read_text(args.detections), args.detections)
    gts = fileio.parse_annotations(fileio.read_text(args.annotations), args.annotations)
    if not 0 < args.iou < 1:
        raise BadInput("--iou must lie in (0, 1)")
    c = evaluation.evaluate_sequence(_det_regions(dets), evaluation.polygon_regions(gts), args.iou)
    name = os.path.splitext(os.path.basename(args.annotations))[0]
    table = evaluation.format_table([(name, c)])
    print(table, end="")
    if args.out:
        _write(os.path.join(_out_dir(args), "metrics.txt"), table)
    return EXIT_OK


def cmd_stats(args, s):
    gts = fileio.parse_annotations(fileio.read_text(args.annotations), args.annotations)
    try:
        st = evaluation.dataset_stats(evaluation.polygon_regions(gts))
    except ValueError as e:
        raise BadInput(f"{args.annotations}: {e}") from None
    lines = [f"pairs {len(st.displacements)}", "displacement_px fraction"]
    for a, b, h in zip(st.disp_edges[:-1], st.disp_edges[1:], st.disp_hist):
        lines.append(f"{fileio.fmt(a)}-{fileio.fmt(b)} {fileio.fmt(h)}")
    lines.append("iou fraction")
    for a, b, h in zip(st.iou_edges[:-1], st.iou_edges[1:], st.iou_hist):
        lines.append(f"{fileio.fmt(a)}-{fileio.fmt(b)} {fileio.fmt(h)}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        _write(os.path.join(_out_dir(args), "stats.txt"), text)
    return EXIT_OK


COMMANDS = {"detect": cmd_detect, "deblur": cmd_deblur, "superres": cmd_superres,
            "highlight": cmd_highlight, "synth": cmd_synth, "eval": cmd_eval, "stats": cmd_stats}


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_BAD_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        s = load_settings(args)
        return COMMANDS[args.command](args, s)
    except BadInput as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (db.NonFinite, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
