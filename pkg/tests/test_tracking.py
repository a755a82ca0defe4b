import numpy as np
import pytest

import invisitrack.tracking as tracking
from invisitrack.errors import InsufficientFrames, InvalidSigma, NonConvergence
from invisitrack.fitting import DeformationState
from invisitrack.geometry import CameraModel, look_at
from invisitrack.synth import MotionModel, RigSpec, TriggerTimeline, build_rig, render_sequence
from invisitrack.template import TemplateMesh, build_grid_template
from invisitrack.tracking import (
    FittedFrame,
    delay_alignment_curve,
    interpolate_frame,
    segment_hits_triangles,
    track_sequence,
    visibility_weights,
    warp_features,
)


@pytest.fixture(scope="module")
def scene():
    mesh, bindings = build_grid_template(4, 5, 20.0)
    return mesh, bindings, build_rig(RigSpec(12, 4, 750.0))


def _frame(rng, idx, n=6, t=0.0):
    v = rng.normal(0, 10, (n, 3))
    return FittedFrame(idx, t, v, ["m0", "m1", "m2"], v[:3].copy(),
                       state=DeformationState(rng.normal(size=(n, 3)), np.tile(np.eye(3), (n, 1, 1))))


# ---------------------------------------------------------------------------
# interpolation


def test_interpolation_endpoints_and_midpoint(rng):
    a, b = _frame(rng, 0, t=0.0), _frame(rng, 1, t=16.0)
    f0 = interpolate_frame(a, b, 0.0, 16.0)
    np.testing.assert_array_equal(f0.marker_points_3d, a.marker_points_3d)
    np.testing.assert_array_equal(f0.deformed_vertices, a.deformed_vertices)
    f1 = interpolate_frame(a, b, 16.0, 16.0)
    np.testing.assert_allclose(f1.marker_points_3d, b.marker_points_3d, atol=1e-12)
    mid = interpolate_frame(a, b, 8.0, 16.0)
    np.testing.assert_allclose(mid.marker_points_3d, 0.5 * (a.marker_points_3d + b.marker_points_3d), atol=1e-12)
    np.testing.assert_allclose(mid.state.translations, 0.5 * (a.state.translations + b.state.translations))
    assert mid.timestamp_ms == 8.0


def test_interpolation_symmetry(rng):
    a, b = _frame(rng, 0), _frame(rng, 1)
    for s in (1.0, 4.5, 11.0):
        fwd = interpolate_frame(a, b, s, 16.0)
        bwd = interpolate_frame(b, a, 16.0 - s, 16.0)
        np.testing.assert_allclose(fwd.marker_points_3d, bwd.marker_points_3d, atol=1e-12)


@pytest.mark.parametrize("sigma, interval", [(-0.1, 16.0), (16.5, 16.0), (1.0, 0.0)])
def test_interpolation_invalid_sigma(rng, sigma, interval):
    with pytest.raises(InvalidSigma):
        interpolate_frame(_frame(rng, 0), _frame(rng, 1), sigma, interval)


def test_frame_serialisation(rng):
    f = _frame(rng, 3, t=48.0)
    back = FittedFrame.from_dict(f.to_dict(include_state=True))
    np.testing.assert_array_equal(back.marker_points_3d, f.marker_points_3d)
    np.testing.assert_array_equal(back.state.translations, f.state.translations)
    assert back.marker_ids == f.marker_ids and back.timestamp_ms == 48.0


# ---------------------------------------------------------------------------
# visibility


K = np.array([[2000.0, 0, 511.5], [0, 2000.0, 511.5], [0, 0, 1]])


def _camera_above(height=750.0):
    R, t = look_at((0, 0, height), up=(0, 1, 0))
    return CameraModel("top", K, R, t, 1024, 1024)


def test_plane_seen_from_front_is_fully_visible(scene):
    mesh, bindings, rig = scene
    w = visibility_weights(mesh.vertices, mesh.faces, mesh.vertices, _camera_above())
    np.testing.assert_array_equal(w, 1.0)
    for cam in rig.cameras:
        assert np.all(visibility_weights(mesh.vertices, mesh.faces, mesh.vertices, cam) == 1.0)


def test_marker_behind_camera_is_invisible(scene):
    mesh, _, _ = scene
    cam = _camera_above(100.0)
    w = visibility_weights(mesh.vertices, mesh.faces, np.array([[0, 0, 200.0], [0, 0, 0.0]]), cam)
    np.testing.assert_array_equal(w, [0.0, 1.0])


def _two_layers():
    base, _ = build_grid_template(4, 4, 20.0)
    n = base.n_vertices
    verts = np.vstack([base.vertices, base.vertices * [1.5, 1.5, 1] + [0, 0, 10.0]])
    faces = np.vstack([base.faces, base.faces + n])
    return TemplateMesh(verts, faces), n


def test_folded_flap_occludes_markers():
    mesh, n = _two_layers()
    cam = _camera_above()
    bottom = mesh.vertices[:n]
    w = visibility_weights(mesh.vertices, mesh.faces, mesh.vertices, cam)
    np.testing.assert_array_equal(w[:n], 0.0)
    np.testing.assert_array_equal(w[n:], 1.0)
    # oracle: each sight line crosses the plane z=10 inside the (larger) top layer
    C = cam.center
    s = (10.0 - C[2]) / (bottom[:, 2] - C[2])
    hit = C + s[:, None] * (bottom - C)
    assert np.all(np.abs(hit[:, :2]) <= 45.0)


def test_segment_hits_triangles_oracle(rng):
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], dtype=float)
    targets = np.array([[0.2, 0.2, -1], [1.6, 1.6, -1], [0.2, 0.2, 0.5]])
    hits = segment_hits_triangles(np.array([0.2, 0.2, 1.0]), targets, tri)
    np.testing.assert_array_equal(hits[:, 0], [True, False, False])


# ---------------------------------------------------------------------------
# tracking


def test_track_empty_sequence(scene):
    mesh, bindings, rig = scene
    assert track_sequence(mesh, bindings, [], rig.uv) == []


def test_track_static_sequence(scene):
    mesh, bindings, rig = scene
    seq = render_sequence(mesh, bindings, MotionModel("rigid_swing"), rig, TriggerTimeline(2), noise_px=0.3, seed=3)
    cloud, obs, _ = seq.fit_inputs()[1]
    frames = track_sequence(mesh, bindings, [(cloud, obs, 16.0 * k) for k in range(4)], rig.uv)
    ref = frames[0].state
    for f in frames[1:]:
        assert not f.nonconverged
        assert np.abs(f.state.translations - ref.translations).max() < 1e-6
        assert np.abs(f.state.rotations - ref.rotations).max() < 1e-6


def test_track_flags_nonconvergence(scene, monkeypatch):
    mesh, bindings, rig = scene
    seq = render_sequence(mesh, bindings, MotionModel("rigid_swing"), rig, TriggerTimeline(3), seed=1)
    real = tracking.fit_template
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise NonConvergence("forced", state=None, report=None)
        return real(*args, **kwargs)

    monkeypatch.setattr(tracking, "fit_template", flaky)
    frames = track_sequence(mesh, bindings, seq.fit_inputs(), rig.uv)
    assert [f.nonconverged for f in frames] == [False, True, False]
    np.testing.assert_array_equal(frames[1].deformed_vertices, frames[0].deformed_vertices)


def test_warp_zero_delay_matches_reference_views(scene):
    mesh, bindings, rig = scene
    seq = render_sequence(mesh, bindings, MotionModel("cylindrical_bend"), rig, TriggerTimeline(4, 16.0, 0.0),
                          cloud_sampling="vertices")
    fitted = track_sequence(mesh, bindings, seq.fit_inputs(), rig.uv)
    for f, fit in zip(seq.frames, fitted):
        ref = f.reference_observations
        for ci, cam in enumerate(rig.reference):
            labels = warp_features(fit, cam, mesh.faces)
            vis = labels.visible()
            for fi, mid in enumerate(ref.marker_ids):
                if ref.weights[ci, fi] > 0:
                    assert np.linalg.norm(vis[mid] - ref.pixels[ci, fi]) < 0.1


def test_warp_hides_occluded_markers():
    mesh, n = _two_layers()
    ids = [f"m{k}" for k in range(mesh.n_vertices)]
    frame = FittedFrame(0, 0.0, mesh.vertices, ids, mesh.vertices)
    labels = warp_features(frame, _camera_above(), mesh.faces)
    assert all(not vis for _, _, vis in labels.labels[:n])
    d = labels.to_dict()
    assert d["camera_id"] == "top" and len(d["labels"]) == mesh.n_vertices


# ---------------------------------------------------------------------------
# delay curve


def _gt_sequence(scene, motion, delay, n=5):
    mesh, bindings, rig = scene
    seq = render_sequence(mesh, bindings, motion, rig, TriggerTimeline(n, 16.0, delay))
    return [f.gt for f in seq.frames], seq.reference_rays()


def test_delay_curve_static_scene(scene):
    frames, rays = _gt_sequence(scene, MotionModel("rigid_swing", frequency_hz=0.0), 4.0)
    curve = delay_alignment_curve(frames, rays, [0, 2, 4, 8], 16.0)
    assert all(d < 1e-9 for _, d in curve)


@pytest.mark.parametrize("delay", [1.0, 4.0, 7.0])
def test_delay_curve_constant_velocity(scene, delay):
    frames, rays = _gt_sequence(scene, MotionModel("linear_drift", velocity=(0.4, 0.1, 0.0)), delay)
    curve = delay_alignment_curve(frames, rays, np.arange(0, 16.5, 0.5), 16.0)
    sigma, best = min(curve, key=lambda c: c[1])
    assert sigma == delay
    assert best < 1e-9


def test_delay_curve_curved_motion(scene):
    frames, rays = _gt_sequence(scene, MotionModel("rigid_swing", amplitude=15.0), 4.0, n=8)
    curve = dict(delay_alignment_curve(frames, rays, np.arange(0, 16.0), 16.0))
    best = min(curve, key=curve.get)
    assert abs(best - 4.0) <= 1.0
    assert curve[0.0] > curve[best]


def test_delay_curve_needs_two_frames(scene):
    frames, rays = _gt_sequence(scene, MotionModel("rigid_swing"), 4.0, n=1)
    with pytest.raises(InsufficientFrames):
        delay_alignment_curve(frames, rays, [0.0], 16.0)
