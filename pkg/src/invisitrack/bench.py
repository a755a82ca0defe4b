"""Evaluation metrics: sparse flow error and vertex-to-vertex distance."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import LinearNDInterpolator

from .errors import NoCommonMarkers, TopologyMismatch

FlowField = Mapping[str, np.ndarray]


@dataclass
class MetricReport:
    """Per-frame metric rows plus their mean as the sequence aggregate."""

    metric: str
    units: str
    columns: list[str]
    per_frame: list[dict] = field(default_factory=list)

    @property
    def aggregate(self) -> dict[str, float]:
        return {c: float(np.mean([row[c] for row in self.per_frame])) if self.per_frame else float("nan")
                for c in self.columns}

    def extend(self, other: "MetricReport", frame: int | None = None) -> None:
        for row in other.per_frame:
            row = dict(row)
            if frame is not None:
                row["frame"] = frame
            self.per_frame.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frame"] + self.columns)
        for row in self.per_frame:
            writer.writerow([row["frame"]] + [repr(float(row[c])) for c in self.columns])
        agg = self.aggregate
        writer.writerow(["AGGREGATE"] + [repr(agg[c]) for c in self.columns])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def flow_error(estimated: FlowField, ground_truth: FlowField, frame: int = 0) -> MetricReport:
    """Endpoint error (AEPE) and mean squared endpoint error over shared markers."""
    common = [m for m in ground_truth if m in estimated]
    if not common:
        raise NoCommonMarkers("estimated and ground-truth flows share no marker ids")
    est = np.array([estimated[m] for m in common], dtype=float).reshape(-1, 2)
    gt = np.array([ground_truth[m] for m in common], dtype=float).reshape(-1, 2)
    d = np.linalg.norm(est - gt, axis=1)
    report = MetricReport("flow_error", "px", ["aepe", "mse", "n"])
    report.per_frame.append({"frame": frame, "aepe": float(d.mean()), "mse": float(np.mean(d**2)), "n": len(common)})
    return report


def vertex_to_vertex_error(estimated, ground_truth, frame: int = 0) -> MetricReport:
    """Mean Euclidean distance between corresponding vertices (mm)."""
    est = np.asarray(estimated, dtype=float).reshape(-1, 3)
    gt = np.asarray(ground_truth, dtype=float).reshape(-1, 3)
    if est.shape != gt.shape:
        raise TopologyMismatch(f"{len(est)} estimated vs {len(gt)} ground-truth vertices")
    d = np.linalg.norm(est - gt, axis=1)
    report = MetricReport("vertex_to_vertex", "mm", ["mean", "rms", "max"])
    report.per_frame.append({"frame": frame, "mean": float(d.mean()), "rms": float(np.sqrt(np.mean(d**2))),
                             "max": float(d.max())})
    return report


def sequence_report(metric: str, units: str, columns: Sequence[str], reports: Sequence[MetricReport]) -> MetricReport:
    out = MetricReport(metric, units, list(columns))
    for r in reports:
        out.extend(r)
    return out


def flow_between(first: Mapping[str, np.ndarray], second: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Sparse flow from per-marker pixel positions in two consecutive frames."""
    return {m: np.asarray(second[m]) - np.asarray(first[m]) for m in first if m in second}


def densify_flow(points, flows, width: int, height: int) -> np.ndarray:
    """Approximate dense flow (H, W, 2) from sparse grid-corner flows.

    Piecewise-linear over a Delaunay triangulation of the corner pixels;
    pixels outside their convex hull are NaN.  Only meant for feeding
    dense-flow evaluations, not as ground truth in its own right.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    interp = LinearNDInterpolator(pts, np.asarray(flows, dtype=float).reshape(-1, 2))
    yy, xx = np.mgrid[0:height, 0:width]
    return interp(np.stack([xx.ravel(), yy.ravel()], axis=1)).reshape(height, width, 2)
