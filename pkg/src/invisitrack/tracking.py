"""Sequential tracking, trigger-delay interpolation and label warping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientFrames, InvalidSigma, NonConvergence
from .fitting import DeformationState, FitConfig, FitReport, GraphNeighborhood, MarkerObservationSet, fit_template
from .geometry import CameraModel, Ray, point_to_ray_distance, project_points
from .template import Binding, Template, closest_points_on_triangles, marker_positions

log = logging.getLogger(__name__)

VISIBILITY_EPS_MM = 1e-3


@dataclass(eq=False)
class FittedFrame:
    """Recovered (or ground-truth) model of one frame."""

    frame_index: int
    timestamp_ms: float
    deformed_vertices: np.ndarray
    marker_ids: list[str]
    marker_points_3d: np.ndarray
    state: DeformationState | None = None
    fit_report: FitReport | None = None
    nonconverged: bool = False

    def marker(self, marker_id: str) -> np.ndarray:
        return self.marker_points_3d[self.marker_ids.index(marker_id)]

    def marker_lookup(self) -> dict[str, np.ndarray]:
        return dict(zip(self.marker_ids, self.marker_points_3d))

    def to_dict(self, include_state: bool = False) -> dict:
        d = {
            "frame": int(self.frame_index),
            "timestamp_ms": float(self.timestamp_ms),
            "nonconverged": bool(self.nonconverged),
            "vertices": self.deformed_vertices.tolist(),
            "markers": {m: p.tolist() for m, p in zip(self.marker_ids, self.marker_points_3d)},
        }
        if self.fit_report is not None:
            d["report"] = self.fit_report.to_dict()
        if include_state and self.state is not None:
            d["state"] = self.state.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedFrame":
        ids = list(d["markers"])
        state = DeformationState.from_dict(d["state"]) if "state" in d else None
        return cls(
            frame_index=int(d["frame"]),
            timestamp_ms=float(d["timestamp_ms"]),
            deformed_vertices=np.array(d["vertices"], dtype=float),
            marker_ids=ids,
            marker_points_3d=np.array([d["markers"][m] for m in ids], dtype=float).reshape(-1, 3),
            state=state,
            nonconverged=bool(d.get("nonconverged", False)),
        )


def frame_from_state(template: Template, bindings: Sequence[Binding], state: DeformationState, frame_index: int,
                     timestamp_ms: float, report: FitReport | None = None, nonconverged: bool = False) -> FittedFrame:
    verts = state.deformed(template.vertices)
    return FittedFrame(
        frame_index=frame_index,
        timestamp_ms=timestamp_ms,
        deformed_vertices=verts,
        marker_ids=[b.marker_id for b in bindings],
        marker_points_3d=marker_positions(verts, bindings, template.faces),
        state=state,
        fit_report=report,
        nonconverged=nonconverged,
    )


@dataclass
class WarpedLabelSet:
    camera_id: str
    frame_index: int
    labels: list[tuple[str, np.ndarray, bool]] = field(default_factory=list)

    def visible(self) -> dict[str, np.ndarray]:
        return {m: px for m, px, vis in self.labels if vis}

    def to_dict(self) -> dict:
        rows = []
        for m, px, vis in self.labels:
            u, v = (None, None) if not np.all(np.isfinite(px)) else px.tolist()
            rows.append({"marker_id": m, "u": u, "v": v, "visible": bool(vis)})
        return {"camera_id": self.camera_id, "frame": int(self.frame_index), "labels": rows}


def track_sequence(template: Template, bindings: Sequence[Binding],
                   frames: Sequence[tuple[np.ndarray, MarkerObservationSet, float]], cameras,
                   config: FitConfig | None = None, neighborhood: GraphNeighborhood | None = None) -> list[FittedFrame]:
    """Fit every frame in order, warm-starting each from its predecessor.

    A frame whose fit fails to converge is flagged and carries the previous
    frame's state forward.
    """
    config = config or FitConfig()
    out: list[FittedFrame] = []
    state = DeformationState.zero(template.n_vertices)
    for k, (cloud, obs, timestamp) in enumerate(frames):
        try:
            new_state, report = fit_template(template, bindings, cloud, obs, cameras, config, init=state,
                                             neighborhood=neighborhood)
            flagged = False
        except NonConvergence as exc:
            log.warning("frame %d did not converge (%s); carrying previous state", k, exc)
            new_state, report, flagged = state.copy(), exc.report, True
        state = new_state
        out.append(frame_from_state(template, bindings, state, k, timestamp, report, flagged))
    return out


def interpolate_frame(f_t: FittedFrame, f_t1: FittedFrame, sigma_ms: float, frame_interval_ms: float) -> FittedFrame:
    """Linear interpolation of positions a fraction sigma/interval towards ``f_t1``.

    Rotations are not interpolated; the result keeps ``f_t``'s state
    rotations with interpolated translations.
    """
    if not frame_interval_ms > 0:
        raise InvalidSigma("frame interval must be positive")
    if not 0 <= sigma_ms <= frame_interval_ms:
        raise InvalidSigma(f"sigma {sigma_ms} ms outside [0, {frame_interval_ms}]")
    if f_t.marker_ids != f_t1.marker_ids:
        raise ValueError("frames carry different marker sets")
    s = sigma_ms / frame_interval_ms

    def lerp(a, b):
        return (1.0 - s) * a + s * b

    state = None
    if f_t.state is not None and f_t1.state is not None:
        state = DeformationState(lerp(f_t.state.translations, f_t1.state.translations), f_t.state.rotations.copy())
    return FittedFrame(
        frame_index=f_t.frame_index,
        timestamp_ms=lerp(f_t.timestamp_ms, f_t1.timestamp_ms),
        deformed_vertices=lerp(f_t.deformed_vertices, f_t1.deformed_vertices),
        marker_ids=list(f_t.marker_ids),
        marker_points_3d=lerp(f_t.marker_points_3d, f_t1.marker_points_3d),
        state=state,
    )


def segment_hits_triangles(origin, targets, tri: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """(P, K) mask: open segment origin -> target[p] crosses triangle k.

    Moller-Trumbore with the segment parameter restricted to (0, 1).
    """
    O = np.asarray(origin, dtype=float)
    D = np.asarray(targets, dtype=float) - O  # (P, 3)
    a = tri[:, 0]
    e1 = tri[:, 1] - a
    e2 = tri[:, 2] - a
    pvec = np.cross(D[:, None, :], e2[None, :, :])  # (P, K, 3)
    det = np.einsum("pkd,kd->pk", pvec, e1)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = O - a  # (K, 3)
    u = np.einsum("pkd,kd->pk", pvec, tvec) * inv
    qvec = np.cross(tvec, e1)  # (K, 3)
    v = np.einsum("pd,kd->pk", D, qvec) * inv
    s = np.einsum("kd,kd->k", qvec, e2)[None, :] * inv
    return ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (s > 0) & (s < 1)


def visibility_weights(deformed_vertices, faces, marker_points_3d, camera: CameraModel,
                       eps: float = VISIBILITY_EPS_MM) -> np.ndarray:
    """1 where a marker is seen by ``camera``, 0 where occluded or out of view.

    A marker is visible when it has positive depth, projects inside the
    image, and the segment from the camera centre to the marker (pulled
    ``eps`` towards the camera) crosses no face other than the ones the
    marker lies on.
    """
    X = np.asarray(marker_points_3d, dtype=float).reshape(-1, 3)
    px, z = project_points(camera, X)
    w = (z > 0) & camera.in_bounds(px) & np.all(np.isfinite(px), axis=1)
    faces = np.asarray(faces, dtype=np.intp).reshape(-1, 3)
    if len(faces) == 0 or not np.any(w):
        return w.astype(float)
    V = np.asarray(deformed_vertices, dtype=float)
    tri = V[faces]
    O = camera.center
    idx = np.flatnonzero(w)
    to_cam = O - X[idx]
    targets = X[idx] + eps * to_cam / np.linalg.norm(to_cam, axis=1, keepdims=True)
    # process markers in chunks to bound the (P, K, 3) temporaries
    chunk = max(1, 2_000_000 // max(len(faces), 1))
    for start in range(0, len(idx), chunk):
        sl = slice(start, start + chunk)
        hits = segment_hits_triangles(O, targets[sl], tri)
        for row, m in enumerate(idx[sl]):
            cand = np.flatnonzero(hits[row])
            if len(cand) == 0:
                continue
            # faces the marker itself lies on never occlude it
            _, dist = closest_points_on_triangles(X[m], tri[cand])
            if np.any(dist > 1e-6):
                w[m] = False
    return w.astype(float)


def warp_features(frame: FittedFrame, reference_camera: CameraModel, faces) -> WarpedLabelSet:
    """Project a (time-aligned) frame's markers into a marker-free view."""
    X = frame.marker_points_3d
    px, z = project_points(reference_camera, X)
    vis = visibility_weights(frame.deformed_vertices, faces, X, reference_camera) > 0
    labels = []
    for k, m in enumerate(frame.marker_ids):
        p = px[k] if z[k] > 0 else np.array([np.nan, np.nan])
        labels.append((m, p, bool(vis[k])))
    return WarpedLabelSet(reference_camera.id, frame.frame_index, labels)


def delay_alignment_curve(sequence: Sequence[FittedFrame], reference_rays: Sequence[Sequence[tuple[str, Ray]]],
                          sigma_values: Sequence[float], frame_interval_ms: float) -> list[tuple[float, float]]:
    """Mean point-to-ray distance as a function of the interpolation offset.

    For every consecutive pair (k, k+1) the frames are interpolated at
    sigma and compared to the rays traced from frame k's reference views.
    """
    if len(sequence) < 2:
        raise InsufficientFrames("need at least two fitted frames")
    curve = []
    for sigma in sigma_values:
        dists = []
        for k in range(len(sequence) - 1):
            mid = interpolate_frame(sequence[k], sequence[k + 1], sigma, frame_interval_ms)
            pos = mid.marker_lookup()
            for marker_id, ray in reference_rays[k]:
                if marker_id in pos:
                    dists.append(point_to_ray_distance(pos[marker_id], ray))
        curve.append((float(sigma), float(np.mean(dists)) if dists else float("nan")))
    return curve
