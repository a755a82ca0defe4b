"""Command-line entry point: ``invisitrack <command> [options]``.

Exit status is 0 on success, 1 on a domain error and 2 on a usage error;
failures print a JSON object ``{"error": ..., "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, synth
from .dataset import Dataset, dump_json, read_jsonl, write_dataset, write_jsonl
from .detection import DYE_PROFILES, DyeProfile, detect_markers, load_image, rgb_image_to_hsv, save_detections
from .errors import InvisiTrackError
from .fitting import FitConfig, fit_template
from .geometry import project_points
from .tracking import FittedFrame, delay_alignment_curve, frame_from_state, interpolate_frame, track_sequence, warp_features

log = logging.getLogger("invisitrack")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_sigmas(text: str) -> list[float]:
    """``"0..15"`` (step 1), ``"0..15:0.5"`` or a comma-separated list."""
    if ".." in text:
        rng, _, step = text.partition(":")
        lo, hi = (float(x) for x in rng.split(".."))
        step = float(step) if step else 1.0
        n = int(round((hi - lo) / step))
        return [lo + i * step for i in range(n + 1)]
    return [float(x) for x in text.split(",") if x.strip()]


def _load_config(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def _fit_config(args) -> FitConfig:
    cfg = _load_config(args.config)
    return FitConfig.from_dict(cfg.get("fit", cfg))


def _synthesize(scene_name: str, n_frames: int, delay_ms: float, interval_ms: float, noise_px: float, seed: int,
                cloud_sampling: str, overrides: dict):
    template, bindings, motion = synth.make_scene(scene_name)
    if "motion" in overrides:
        motion = synth.MotionModel.from_dict({**motion.to_dict(), **overrides["motion"]})
    rig_spec = synth.RigSpec(**overrides.get("rig", {}))
    timeline = synth.TriggerTimeline(n_frames, interval_ms, delay_ms)
    seq = synth.render_sequence(template, bindings, motion, synth.build_rig(rig_spec), timeline, noise_px=noise_px,
                                seed=seed, cloud_sampling=cloud_sampling,
                                cloud_per_element=overrides.get("cloud_per_element", 10))
    scene = {"scene": scene_name, "noise_px": noise_px, "seed": seed, "cloud_sampling": cloud_sampling,
             "rig": {k: (list(v) if isinstance(v, tuple) else v) for k, v in rig_spec.__dict__.items()}}
    return seq, scene


def cmd_synth(args) -> None:
    overrides = _load_config(args.config)
    seq, scene = _synthesize(args.scene, args.frames, args.delay_ms, args.interval_ms, args.noise_px, args.seed,
                             args.cloud_sampling, overrides)
    out = write_dataset(args.out, seq, scene)
    if args.raster:
        dye = "uv_red" if args.scene.startswith("rope") else "uv_blue"
        hue = float(np.mean(DYE_PROFILES[dye].hue_range))
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        from .detection import save_image

        for f in seq.frames:
            for ci, cam in enumerate(seq.rig.uv):
                vis = f.observations.weights[ci] > 0
                img = synth.render_dots(cam.width, cam.height, f.observations.pixels[ci, vis], hue)
                save_image(img, img_dir / f"{cam.id}_{f.index:04d}.png")
    print(json.dumps({"dataset": str(out), "frames": len(seq.frames)}))


def cmd_detect(args) -> None:
    if args.config:
        cfg = _load_config(args.config)
        profiles = [DyeProfile(**{**p, "hue_range": tuple(p["hue_range"])}) for p in cfg.get("profiles", [cfg])]
    elif args.dye == "both":
        profiles = list(DYE_PROFILES.values())
    else:
        profiles = [DYE_PROFILES[args.dye]]
    paths = []
    for p in map(Path, args.images):
        paths.extend(sorted(p.glob("*.png")) + sorted(p.glob("*.ppm")) if p.is_dir() else [p])
    detections = []
    for path in paths:
        cam, _, frame = path.stem.rpartition("_")
        if not cam or not frame.isdigit():
            cam, frame = path.stem, "0"
        hsv = rgb_image_to_hsv(load_image(path))
        for prof in profiles:
            detections += detect_markers(hsv, prof, args.min_blob_size, cam, int(frame))
    out = Path(args.out)
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "detections.json"
    save_detections(detections, out)
    print(json.dumps({"detections": len(detections), "output": str(out)}))


def cmd_fit(args) -> None:
    ds = Dataset.load(args.data)
    cloud, obs, ts, _ = ds.frame(args.frame)
    state, report = fit_template(ds.template, ds.bindings, cloud, obs, ds.uv_cameras, _fit_config(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(state.to_dict(), out / "state.json")
    dump_json(report.to_dict(include_timing=args.record_time), out / "report.json")
    frame = frame_from_state(ds.template, ds.bindings, state, args.frame, ts)
    write_jsonl([frame.to_dict()], out / "sequence.jsonl")
    print(json.dumps({"final_energy": report.final_energy, "converged": report.converged}))


def cmd_track(args) -> None:
    ds = Dataset.load(args.data)
    fitted = track_sequence(ds.template, ds.bindings, ds.fit_inputs(), ds.uv_cameras, _fit_config(args))
    out = Path(args.out)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    write_jsonl([f.to_dict() for f in fitted], out / "sequence.jsonl")
    interval, delay = ds.scene["frame_interval_ms"], ds.scene["delay_ms"]
    for k, frame in enumerate(fitted):
        aligned = interpolate_frame(frame, fitted[k + 1], delay, interval) if k + 1 < len(fitted) else frame
        for cam in ds.reference_cameras:
            labels = warp_features(aligned, cam, ds.template.faces).to_dict()
            labels["interpolated"] = k + 1 < len(fitted)
            dump_json(labels, out / "labels" / f"{cam.id}_{k:04d}.json")
    flagged = sum(f.nonconverged for f in fitted)
    print(json.dumps({"frames": len(fitted), "nonconverged": flagged}))


def _load_labels(label_dir: Path) -> dict[tuple[str, int], dict[str, np.ndarray]]:
    out = {}
    for p in sorted(label_dir.glob("*.json")):
        d = json.loads(p.read_text())
        if not d.get("interpolated", True):
            continue
        out[(d["camera_id"], d["frame"])] = {r["marker_id"]: np.array([r["u"], r["v"]]) for r in d["labels"] if r["visible"]}
    return out


def cmd_eval(args) -> None:
    ds = Dataset.load(args.data)
    fitted = [FittedFrame.from_dict(d) for d in read_jsonl(args.fitted)]
    gt = {f.frame_index: f for f in ds.ground_truth("uv")}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    vert = bench.MetricReport("vertex_to_vertex", "mm", ["mean", "rms", "max"])
    mark = bench.MetricReport("marker_error", "mm", ["mean", "rms", "max"])
    for f in fitted:
        g = gt[f.frame_index]
        vert.extend(bench.vertex_to_vertex_error(f.deformed_vertices, g.deformed_vertices, f.frame_index))
        mark.extend(bench.vertex_to_vertex_error(f.marker_points_3d, g.marker_points_3d, f.frame_index))
    vert.write_csv(out / "vertex_error.csv")
    mark.write_csv(out / "marker_error.csv")
    written = ["vertex_error.csv", "marker_error.csv"]

    label_dir = Path(args.labels) if args.labels else Path(args.fitted).parent / "labels"
    if label_dir.is_dir():
        labels = _load_labels(label_dir)
        gt_ref = {f.frame_index: f for f in ds.ground_truth("reference")}
        flow = bench.MetricReport("flow_error", "px", ["aepe", "mse", "n"])
        frames = sorted({k for _, k in labels})
        for k in frames[:-1]:
            per_cam = []
            for cam in ds.reference_cameras:
                a, b = labels.get((cam.id, k)), labels.get((cam.id, k + 1))
                if not a or not b:
                    continue
                est = bench.flow_between(a, b)
                px0, _ = project_points(cam, gt_ref[k].marker_points_3d)
                px1, _ = project_points(cam, gt_ref[k + 1].marker_points_3d)
                truth = {m: px1[i] - px0[i] for i, m in enumerate(gt_ref[k].marker_ids) if m in est}
                if truth:
                    per_cam.append(bench.flow_error(est, truth, k).per_frame[0])
            if per_cam:
                n = sum(r["n"] for r in per_cam)
                flow.per_frame.append({
                    "frame": k,
                    "aepe": sum(r["aepe"] * r["n"] for r in per_cam) / n,
                    "mse": sum(r["mse"] * r["n"] for r in per_cam) / n,
                    "n": n,
                })
        flow.write_csv(out / "flow_error.csv")
        written.append("flow_error.csv")
    print(json.dumps({"written": written, "marker_rms_mm": mark.aggregate["rms"]}))


def cmd_curve(args) -> None:
    overrides = _load_config(args.config)
    sigmas = parse_sigmas(args.sigmas)
    rows = []
    # a dataset was rendered with one delay; --delays only applies when synthesising
    delays = [Dataset.load(args.data).scene["delay_ms"]] if args.data else parse_sigmas(args.delays)
    for delay in delays:
        if args.data:
            ds = Dataset.load(args.data)
            interval = ds.scene["frame_interval_ms"]
            frames = ds.ground_truth("uv") if args.use_gt else track_sequence(
                ds.template, ds.bindings, ds.fit_inputs(), ds.uv_cameras, _fit_config(args))
            rays = ds.reference_rays()
        else:
            seq, _ = _synthesize(args.scene, args.frames, delay, args.interval_ms, args.noise_px, args.seed,
                                 "faces", overrides)
            interval = args.interval_ms
            frames = [f.gt for f in seq.frames] if args.use_gt else track_sequence(
                seq.template, seq.bindings, seq.fit_inputs(), seq.rig.uv, _fit_config(args))
            rays = seq.reference_rays()
        for sigma, dist in delay_alignment_curve(frames, rays, [s for s in sigmas if s <= interval], interval):
            rows.append((delay, sigma, dist))
    out = Path(args.out)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "curve.csv"
    lines = ["delay_ms,sigma_ms,mean_distance_mm"] + [f"{d!r},{s!r},{v!r}" for d, s, v in rows]
    out.write_text("\n".join(lines) + "\n")
    print(json.dumps({"rows": len(rows), "output": str(out)}))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="invisitrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", required=out_required)
        return p

    p = common(sub.add_parser("synth", help="render a synthetic dataset"))
    p.add_argument("--scene", default="grid13x15", choices=synth.SCENES)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--delay-ms", type=float, default=2.0)
    p.add_argument("--interval-ms", type=float, default=16.0)
    p.add_argument("--noise-px", type=float, default=0.0)
    p.add_argument("--cloud-sampling", choices=("faces", "vertices"), default="faces")
    p.add_argument("--raster", action="store_true", help="also write UV images with Gaussian marker dots")
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("detect", help="detect fluorescent markers in images"))
    p.add_argument("images", nargs="+", help="image files or directories")
    p.add_argument("--dye", choices=sorted(DYE_PROFILES) + ["both"], default="both")
    p.add_argument("--min-blob-size", type=int, default=4)
    p.set_defaults(func=cmd_detect)

    p = common(sub.add_parser("fit", help="fit the template to one frame"))
    p.add_argument("--data", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--record-time", action="store_true", help="include wall time in report.json")
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("track", help="track a sequence and warp labels into reference views"))
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_track)

    p = common(sub.add_parser("eval", help="compare fitted frames with ground truth"))
    p.add_argument("--data", required=True)
    p.add_argument("--fitted", required=True, help="sequence.jsonl from fit or track")
    p.add_argument("--labels", help="directory of warped labels (default: next to --fitted)")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("curve", help="point-to-ray distance against interpolation offset"))
    p.add_argument("--delays", default="1,4")
    p.add_argument("--sigmas", default="0..15")
    p.add_argument("--data", help="use an existing dataset instead of synthesising one per delay")
    p.add_argument("--scene", default="grid13x15-drift", choices=synth.SCENES)
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--interval-ms", type=float, default=16.0)
    p.add_argument("--noise-px", type=float, default=0.5)
    p.add_argument("--use-gt", action="store_true", help="skip fitting and use ground-truth frames")
    p.set_defaults(func=cmd_curve)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except (InvisiTrackError, ValueError, OSError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
