"""Synthetic multi-camera scenes with exact ground truth.

A virtual rig of inward-facing cameras on a sphere observes a template
driven by a parametric motion.  UV cameras fire at ``k * interval`` and
reference cameras ``delay_ms`` later; observations are the exact marker
projections plus seeded Gaussian pixel noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import UnknownMotion
from .fitting import MarkerObservationSet
from .geometry import CameraModel, Ray, look_at, pixel_to_ray, project_points
from .template import Binding, JointChain, Template, marker_positions
from .tracking import FittedFrame, visibility_weights

# 30 degree horizontal field of view on a 2448 px wide sensor
DEFAULT_IMAGE_SIZE = (2448, 2048)
DEFAULT_FOCAL_PX = (DEFAULT_IMAGE_SIZE[0] / 2.0) / np.tan(np.radians(15.0))

MOTION_KINDS = ("cylindrical_bend", "sinusoidal_wave", "rigid_swing", "chain_swing", "linear_drift")

_UV_STREAM, _REF_STREAM, _CLOUD_STREAM = 0, 1, 2


@dataclass(frozen=True)
class RigSpec:
    n_uv_cameras: int = 33
    n_reference_cameras: int = 9
    radius_mm: float = 750.0
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    focal_px: float = DEFAULT_FOCAL_PX

    def __post_init__(self):
        if self.n_uv_cameras < 1 or self.n_reference_cameras < 1:
            raise ValueError("rig needs at least one camera of each kind")
        if not self.radius_mm > 0 or not self.focal_px > 0:
            raise ValueError("radius and focal length must be positive")


@dataclass(frozen=True)
class Rig:
    uv: list[CameraModel]
    reference: list[CameraModel]

    @property
    def cameras(self) -> list[CameraModel]:
        return list(self.uv) + list(self.reference)

    def by_id(self) -> dict[str, CameraModel]:
        return {c.id: c for c in self.cameras}


@dataclass(frozen=True)
class TriggerTimeline:
    n_frames: int
    frame_interval_ms: float = 16.0
    delay_ms: float = 2.0

    def __post_init__(self):
        if not 0 <= self.delay_ms < self.frame_interval_ms:
            raise ValueError("delay must lie in [0, frame interval)")
        if self.n_frames < 0:
            raise ValueError("negative frame count")

    def uv_time(self, k: int) -> float:
        return k * self.frame_interval_ms

    def reference_time(self, k: int) -> float:
        return k * self.frame_interval_ms + self.delay_ms


@dataclass(frozen=True)
class MotionModel:
    """Parametric deformation, evaluated in closed form at any time.

    ``amplitude`` is in degrees for angular motions (bend, swing, chain)
    and in millimetres for ``sinusoidal_wave``.  ``velocity`` (mm/ms) is
    only used by ``linear_drift``.
    """

    kind: str
    amplitude: float = 30.0
    frequency_hz: float = 1.0
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    pivot: tuple[float, float, float] | None = None
    wavelength_mm: float = 200.0
    velocity: tuple[float, float, float] = (0.5, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in MOTION_KINDS:
            raise UnknownMotion(f"unknown motion kind {self.kind!r}; expected one of {MOTION_KINDS}")
        if self.frequency_hz < 0 or self.wavelength_mm <= 0:
            raise ValueError("frequency must be >= 0 and wavelength > 0")
        if self.kind == "cylindrical_bend" and not abs(self.amplitude) < 360:
            raise ValueError("bend angle must be below 360 degrees")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MotionModel":
        d = dict(d)
        for key in ("axis", "pivot", "velocity"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def build_rig(spec: RigSpec) -> Rig:
    """Cameras on a Fibonacci sphere, all looking at the origin.

    Reference cameras are interleaved evenly among the UV cameras.
    """
    n = spec.n_uv_cameras + spec.n_reference_cameras
    golden = np.pi * (3.0 - np.sqrt(5.0))
    ref_slots = {int((k + 0.5) * n / spec.n_reference_cameras) for k in range(spec.n_reference_cameras)}
    w, h = spec.image_size
    K = np.array([[spec.focal_px, 0.0, (w - 1) / 2.0], [0.0, spec.focal_px, (h - 1) / 2.0], [0.0, 0.0, 1.0]])
    uv, ref = [], []
    for i in range(n):
        z = 1.0 - (2 * i + 1) / n
        r = np.sqrt(1.0 - z * z)
        eye = spec.radius_mm * np.array([r * np.cos(i * golden), r * np.sin(i * golden), z])
        R, t = look_at(eye, up=(0.0, 1.0, 0.0))
        if i in ref_slots:
            ref.append(CameraModel(f"ref{len(ref):02d}", K, R, t, w, h))
        else:
            uv.append(CameraModel(f"uv{len(uv):02d}", K, R, t, w, h))
    return Rig(uv, ref)


def _bend(v: np.ndarray, angle: float) -> np.ndarray:
    """Isometric cylindrical bend along x, curling towards +z."""
    if abs(angle) < 1e-12:
        return v.copy()
    x0 = 0.5 * (v[:, 0].min() + v[:, 0].max())
    width = v[:, 0].max() - v[:, 0].min()
    R = width / angle
    phi = (v[:, 0] - x0) / R
    out = v.copy()
    # the offset along the local normal (z) is carried onto the cylinder radius
    rr = R - v[:, 2]
    out[:, 0] = x0 + rr * np.sin(phi)
    out[:, 2] = R - rr * np.cos(phi)
    return out


def _rotate(v: np.ndarray, axis, angle: float, pivot) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
    return (v - pivot) @ R.T + pivot


def _chain(v: np.ndarray, angle: float) -> np.ndarray:
    """Bend a chain in the x-z plane with direction angle growing linearly along it."""
    seg = np.diff(v, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    s_mid = np.cumsum(lengths) - 0.5 * lengths
    psi = angle * s_mid / lengths.sum()
    # rotate each rest segment about y by its psi
    c, s = np.cos(psi), np.sin(psi)
    new = np.stack([c * seg[:, 0] - s * seg[:, 2], seg[:, 1], s * seg[:, 0] + c * seg[:, 2]], axis=1)
    return np.vstack([v[:1], v[0] + np.cumsum(new, axis=0)])


def evaluate_motion(template: Template, model: MotionModel, t_ms: float) -> np.ndarray:
    """Ground-truth vertex positions at time ``t_ms``; t=0 gives the rest pose."""
    if t_ms < 0:
        raise ValueError("time must be non-negative")
    v = np.asarray(template.vertices, dtype=float)
    if t_ms == 0:
        return v.copy()
    t = t_ms / 1000.0
    phase = 2.0 * np.pi * model.frequency_hz * t
    if model.kind == "cylindrical_bend":
        return _bend(v, np.radians(model.amplitude) * np.sin(0.5 * phase) ** 2)
    if model.kind == "sinusoidal_wave":
        out = v.copy()
        x = v[:, 0] - v[:, 0].min()
        out[:, 2] += model.amplitude * np.sin(phase) * np.sin(2 * np.pi * x / model.wavelength_mm)
        return out
    if model.kind == "rigid_swing":
        pivot = np.array(model.pivot) if model.pivot is not None else np.array([0.0, v[:, 1].max(), 0.0])
        return _rotate(v, model.axis, np.radians(model.amplitude) * np.sin(phase), pivot)
    if model.kind == "chain_swing":
        return _chain(v, np.radians(model.amplitude) * np.sin(phase))
    if model.kind == "linear_drift":
        return v + np.asarray(model.velocity, dtype=float) * t_ms
    raise UnknownMotion(model.kind)


def time_of_bend(model: MotionModel, angle_deg: float) -> float:
    """Earliest time (ms) at which a cylindrical bend reaches ``angle_deg``."""
    frac = angle_deg / model.amplitude
    if not 0 <= frac <= 1:
        raise ValueError("angle outside the motion's range")
    return 1000.0 * np.arcsin(np.sqrt(frac)) / (np.pi * model.frequency_hz)


def sample_surface(template: Template, vertices, per_element: int, rng: np.random.Generator) -> np.ndarray:
    """Random points on faces (uniform barycentrics) or along chain segments."""
    v = np.asarray(vertices, dtype=float)
    if isinstance(template, JointChain) or len(template.faces) == 0:
        a = v[:-1].repeat(per_element, axis=0)
        b = v[1:].repeat(per_element, axis=0)
        u = rng.random(len(a))[:, None]
        return (1 - u) * a + u * b
    f = np.asarray(template.faces).repeat(per_element, axis=0)
    r1 = np.sqrt(rng.random(len(f)))
    r2 = rng.random(len(f))
    bary = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    return np.einsum("mk,mkd->md", bary, v[f])


def observe(template: Template, vertices, markers, marker_ids: Sequence[str], cameras: Sequence[CameraModel],
            noise_px: float, rng_for_camera) -> MarkerObservationSet:
    """Noisy projections of visible markers into each camera."""
    C, F = len(cameras), len(marker_ids)
    px = np.zeros((C, F, 2))
    w = np.zeros((C, F))
    for ci, cam in enumerate(cameras):
        vis = visibility_weights(vertices, template.faces, markers, cam)
        p, _ = project_points(cam, markers)
        if noise_px > 0:
            p = p + rng_for_camera(ci).normal(0.0, noise_px, size=p.shape)
        # noise may push a border marker off the sensor
        vis = vis * cam.in_bounds(p)
        px[ci] = np.where(vis[:, None] > 0, p, 0.0)
        w[ci] = vis
    return MarkerObservationSet([c.id for c in cameras], list(marker_ids), px, w)


@dataclass(eq=False)
class SynthFrame:
    index: int
    uv_time_ms: float
    reference_time_ms: float
    cloud: np.ndarray
    observations: MarkerObservationSet
    reference_observations: MarkerObservationSet
    gt: FittedFrame
    gt_reference: FittedFrame

    def reference_rays(self, cameras: dict[str, CameraModel]) -> list[tuple[str, Ray]]:
        """Rays traced from every visible reference-view marker observation."""
        obs = self.reference_observations
        rays = []
        for ci, cid in enumerate(obs.camera_ids):
            for f, mid in enumerate(obs.marker_ids):
                if obs.weights[ci, f] > 0:
                    rays.append((mid, pixel_to_ray(cameras[cid], obs.pixels[ci, f])))
        return rays


@dataclass(eq=False)
class SyntheticSequence:
    template: Template
    bindings: list[Binding]
    rig: Rig
    timeline: TriggerTimeline
    motion: MotionModel
    frames: list[SynthFrame] = field(default_factory=list)

    def fit_inputs(self) -> list[tuple[np.ndarray, MarkerObservationSet, float]]:
        return [(f.cloud, f.observations, f.uv_time_ms) for f in self.frames]

    def reference_rays(self) -> list[list[tuple[str, Ray]]]:
        cams = self.rig.by_id()
        return [f.reference_rays(cams) for f in self.frames]


def _gt_frame(template, bindings, verts, index, t) -> FittedFrame:
    return FittedFrame(index, t, verts, [b.marker_id for b in bindings], marker_positions(verts, bindings, template.faces))


def render_sequence(template: Template, bindings: Sequence[Binding], model: MotionModel, rig: Rig,
                    timeline: TriggerTimeline, noise_px: float = 0.0, seed: int = 0, cloud_per_element: int = 10,
                    cloud_sampling: str = "faces", cloud_noise_mm: float = 0.0) -> SyntheticSequence:
    """Render UV observations, point clouds and delayed reference views.

    ``cloud_sampling`` is ``"faces"`` (``cloud_per_element`` jittered points
    per face or chain segment) or ``"vertices"`` (the deformed vertices).
    Every random draw comes from a generator keyed on (seed, frame, stream,
    camera), so output is reproducible and order independent.
    """
    if noise_px < 0 or cloud_noise_mm < 0:
        raise ValueError("noise levels must be non-negative")
    if cloud_sampling not in ("faces", "vertices"):
        raise ValueError("cloud_sampling must be 'faces' or 'vertices'")
    marker_ids = [b.marker_id for b in bindings]
    seq = SyntheticSequence(template, list(bindings), rig, timeline, model)
    for k in range(timeline.n_frames):
        t_uv, t_ref = timeline.uv_time(k), timeline.reference_time(k)
        gt = _gt_frame(template, bindings, evaluate_motion(template, model, t_uv), k, t_uv)
        gt_ref = _gt_frame(template, bindings, evaluate_motion(template, model, t_ref), k, t_ref)

        def rng(stream, ci=0, k=k):
            return np.random.default_rng([seed, k, stream, ci])

        obs = observe(template, gt.deformed_vertices, gt.marker_points_3d, marker_ids, rig.uv, noise_px,
                      lambda ci: rng(_UV_STREAM, ci))
        ref_obs = observe(template, gt_ref.deformed_vertices, gt_ref.marker_points_3d, marker_ids, rig.reference,
                          noise_px, lambda ci: rng(_REF_STREAM, ci))
        crng = rng(_CLOUD_STREAM)
        if cloud_sampling == "vertices":
            cloud = gt.deformed_vertices.copy()
        else:
            cloud = sample_surface(template, gt.deformed_vertices, cloud_per_element, crng)
        if cloud_noise_mm > 0:
            cloud = cloud + crng.normal(0.0, cloud_noise_mm, size=cloud.shape)
        seq.frames.append(SynthFrame(k, t_uv, t_ref, cloud, obs, ref_obs, gt, gt_ref))
    return seq


# ---------------------------------------------------------------------------
# raster mode


def hsv_to_rgb_image(hsv: np.ndarray) -> np.ndarray:
    """Vectorised HSV (H on 0-180, S and V on 0-1) to float RGB on 0-1."""
    h = (hsv[..., 0] / 30.0) % 6.0
    s, v = hsv[..., 1], hsv[..., 2]
    i = np.floor(h).astype(int)
    f = h - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    choices = [
        np.stack([v, t, p], -1), np.stack([q, v, p], -1), np.stack([p, v, t], -1),
        np.stack([p, q, v], -1), np.stack([t, p, v], -1), np.stack([v, p, q], -1),
    ]
    out = np.zeros(hsv.shape[:-1] + (3,))
    for k, c in enumerate(choices):
        out = np.where((i == k)[..., None], c, out)
    return out


def render_dots(width: int, height: int, centers, hues, sigma_px: float = 1.5, peak: float = 1.0,
                saturation: float = 1.0) -> np.ndarray:
    """8-bit RGB image of Gaussian dots on black.

    Each dot has constant hue and saturation; its value falls off as a
    Gaussian of the distance to the (sub-pixel) centre.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    hues = np.broadcast_to(np.asarray(hues, dtype=float), (len(centers),))
    hsv = np.zeros((height, width, 3))
    radius = int(np.ceil(4 * sigma_px))
    for (cx, cy), hue in zip(centers, hues):
        x0, x1 = max(int(np.floor(cx)) - radius, 0), min(int(np.ceil(cx)) + radius + 1, width)
        y0, y1 = max(int(np.floor(cy)) - radius, 0), min(int(np.ceil(cy)) + radius + 1, height)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        val = peak * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma_px**2))
        patch = hsv[y0:y1, x0:x1]
        brighter = val > patch[..., 2]
        patch[..., 0] = np.where(brighter, hue, patch[..., 0])
        patch[..., 1] = np.where(brighter, saturation, patch[..., 1])
        patch[..., 2] = np.maximum(patch[..., 2], val)
    out = np.zeros((height, width, 3), dtype=np.uint8)
    lit = hsv[..., 2] > 0
    out[lit] = np.round(hsv_to_rgb_image(hsv[lit]) * 255).astype(np.uint8)
    return out


# ---------------------------------------------------------------------------
# named scenes


def make_scene(name: str) -> tuple[Template, list[Binding], MotionModel]:
    """Preset template + motion pairs used by the command line."""
    from .template import build_chain_template, build_grid_template, chain_bindings

    if name == "rope10":
        chain = build_chain_template(10, 12.7)
        return chain, chain_bindings(chain), MotionModel("chain_swing", amplitude=40.0, frequency_hz=1.0)
    grid_scenes = {
        "grid13x15": MotionModel("rigid_swing", amplitude=15.0, frequency_hz=1.0),
        "grid13x15-bend": MotionModel("cylindrical_bend", amplitude=30.0, frequency_hz=1.0),
        "grid13x15-wave": MotionModel("sinusoidal_wave", amplitude=15.0, frequency_hz=1.0),
        "grid13x15-drift": MotionModel("linear_drift", velocity=(0.5, 0.0, 0.0)),
    }
    if name not in grid_scenes:
        raise ValueError(f"unknown scene {name!r}; choose from {sorted(grid_scenes) + ['rope10']}")
    mesh, bindings = build_grid_template(13, 15, 20.0)
    return mesh, bindings, grid_scenes[name]


SCENES = ("grid13x15", "grid13x15-bend", "grid13x15-wave", "grid13x15-drift", "rope10")
