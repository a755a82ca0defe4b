"""On-disk layout of synthetic datasets and fitted sequences.

::

    <dir>/scene.json        scene parameters and camera roles
    <dir>/cameras.json      rig file (all cameras)
    <dir>/template.obj | template_chain.json
    <dir>/bindings.json
    <dir>/frames/NNNN.json  cloud, UV observations, reference observations
    <dir>/gt/uv.jsonl       ground truth at UV trigger times
    <dir>/gt/reference.jsonl ground truth at reference trigger times
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fitting import MarkerObservationSet
from .geometry import CameraModel, load_rig, pixel_to_ray, save_rig
from .template import (
    Binding,
    JointChain,
    Template,
    load_bindings,
    load_chain,
    load_obj,
    save_bindings,
    save_chain,
    save_obj,
)
from .tracking import FittedFrame


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_jsonl(rows, path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_dataset(out, seq, scene: dict) -> Path:
    """Write a :class:`~invisitrack.synth.SyntheticSequence` to ``out``."""
    out = Path(out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    scene = dict(scene)
    scene["uv_camera_ids"] = [c.id for c in seq.rig.uv]
    scene["reference_camera_ids"] = [c.id for c in seq.rig.reference]
    scene["frame_interval_ms"] = seq.timeline.frame_interval_ms
    scene["delay_ms"] = seq.timeline.delay_ms
    scene["n_frames"] = seq.timeline.n_frames
    scene["motion"] = seq.motion.to_dict()
    dump_json(scene, out / "scene.json")
    save_rig(seq.rig.cameras, out / "cameras.json")
    if isinstance(seq.template, JointChain):
        save_chain(seq.template, out / "template_chain.json")
    else:
        save_obj(seq.template, out / "template.obj")
    save_bindings(seq.bindings, out / "bindings.json")
    for f in seq.frames:
        dump_json({
            "frame": f.index,
            "timestamp_ms": f.uv_time_ms,
            "cloud": f.cloud.tolist(),
            "observations": f.observations.to_records(),
            "reference": {"timestamp_ms": f.reference_time_ms, "observations": f.reference_observations.to_records()},
        }, out / "frames" / f"{f.index:04d}.json")
    write_jsonl([f.gt.to_dict() for f in seq.frames], out / "gt" / "uv.jsonl")
    write_jsonl([f.gt_reference.to_dict() for f in seq.frames], out / "gt" / "reference.jsonl")
    return out


@dataclass
class Dataset:
    root: Path
    scene: dict
    cameras: dict[str, CameraModel]
    template: Template
    bindings: list[Binding]

    @classmethod
    def load(cls, root) -> "Dataset":
        root = Path(root)
        scene = json.loads((root / "scene.json").read_text())
        cams = {c.id: c for c in load_rig(root / "cameras.json")}
        if (root / "template_chain.json").exists():
            template = load_chain(root / "template_chain.json")
        else:
            template = load_obj(root / "template.obj")
        return cls(root, scene, cams, template, load_bindings(root / "bindings.json"))

    @property
    def marker_ids(self) -> list[str]:
        return [b.marker_id for b in self.bindings]

    @property
    def uv_cameras(self) -> list[CameraModel]:
        return [self.cameras[c] for c in self.scene["uv_camera_ids"]]

    @property
    def reference_cameras(self) -> list[CameraModel]:
        return [self.cameras[c] for c in self.scene["reference_camera_ids"]]

    @property
    def n_frames(self) -> int:
        return len(list((self.root / "frames").glob("*.json")))

    def frame(self, k: int) -> tuple[np.ndarray, MarkerObservationSet, float, MarkerObservationSet]:
        d = json.loads((self.root / "frames" / f"{k:04d}.json").read_text())
        obs = MarkerObservationSet.from_records(d["observations"], self.scene["uv_camera_ids"], self.marker_ids)
        ref = MarkerObservationSet.from_records(d["reference"]["observations"], self.scene["reference_camera_ids"],
                                                self.marker_ids)
        return np.array(d["cloud"], dtype=float).reshape(-1, 3), obs, float(d["timestamp_ms"]), ref

    def fit_inputs(self) -> list[tuple[np.ndarray, MarkerObservationSet, float]]:
        return [self.frame(k)[:3] for k in range(self.n_frames)]

    def reference_rays(self):
        out = []
        for k in range(self.n_frames):
            ref = self.frame(k)[3]
            rays = []
            for ci, cid in enumerate(ref.camera_ids):
                for f, mid in enumerate(ref.marker_ids):
                    if ref.weights[ci, f] > 0:
                        rays.append((mid, pixel_to_ray(self.cameras[cid], ref.pixels[ci, f])))
            out.append(rays)
        return out

    def ground_truth(self, which: str = "uv") -> list[FittedFrame]:
        return [FittedFrame.from_dict(d) for d in read_jsonl(self.root / "gt" / f"{which}.jsonl")]
