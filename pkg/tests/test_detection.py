import colorsys
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invisitrack.detection import (
    DYE_PROFILES,
    DyeProfile,
    MarkerDetection,
    detect_markers,
    load_image,
    match_detections,
    rgb_image_to_hsv,
    rgb_to_hsv,
    save_detections,
    save_image,
)
from invisitrack.synth import render_dots


@pytest.mark.parametrize("rgb, hsv", [
    ((255, 0, 0), (0.0, 1.0, 1.0)),
    ((0, 0, 255), (120.0, 1.0, 1.0)),
    ((0, 255, 0), (60.0, 1.0, 1.0)),
])
def test_rgb_to_hsv_examples(rgb, hsv):
    assert rgb_to_hsv(rgb) == pytest.approx(hsv, abs=1e-12)


def test_rgb_to_hsv_grey():
    h, s, v = rgb_to_hsv((128, 128, 128))
    assert s == 0.0
    assert v == pytest.approx(128 / 255)


@settings(max_examples=300, deadline=None)
@given(st.tuples(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255)))
def test_rgb_to_hsv_matches_colorsys(rgb):
    h, s, v = colorsys.rgb_to_hsv(*(c / 255 for c in rgb))
    got = rgb_to_hsv(rgb)
    assert got[1:] == pytest.approx((s, v), abs=1e-12)
    if s > 0:
        dh = abs(got[0] - 180 * h)
        assert min(dh, 180 - dh) < 1e-9


def test_image_conversion_is_vectorised(rng):
    img = rng.integers(0, 256, (7, 9, 3))
    hsv = rgb_image_to_hsv(img)
    for y, x in [(0, 0), (3, 4), (6, 8)]:
        assert tuple(hsv[y, x]) == pytest.approx(rgb_to_hsv(img[y, x]))


def _block_image(hue, size=(200, 200), top_left=(100, 100)):
    hsv = np.zeros(size + (3,))
    y, x = top_left
    hsv[y:y + 5, x:x + 5] = (hue, 1.0, 1.0)
    return hsv


def test_single_block_centroid():
    dets = detect_markers(_block_image(8.0), DYE_PROFILES["uv_red"], 4, "cam", 3)
    assert len(dets) == 1
    np.testing.assert_allclose(dets[0].centroid, (102, 102))
    assert dets[0].pixel_count == 25
    assert dets[0].to_dict() == {"camera_id": "cam", "frame": 3, "dye": "uv_red", "cx": 102.0, "cy": 102.0,
                                 "pixel_count": 25}
    assert detect_markers(_block_image(8.0), DYE_PROFILES["uv_blue"]) == []


def test_green_block_is_rejected():
    for profile in DYE_PROFILES.values():
        assert detect_markers(_block_image(60.0), profile) == []


def test_min_blob_size():
    hsv = np.zeros((20, 20, 3))
    hsv[5, 5] = hsv[5, 6] = (118, 1, 1)
    assert detect_markers(hsv, DYE_PROFILES["uv_blue"], 3) == []
    assert len(detect_markers(hsv, DYE_PROFILES["uv_blue"], 2)) == 1


def test_diagonal_pixels_are_connected():
    hsv = np.zeros((20, 20, 3))
    for k in range(4):
        hsv[5 + k, 5 + k] = (118, 1, 1)
    assert len(detect_markers(hsv, DYE_PROFILES["uv_blue"], 4)) == 1


def test_gaussian_dots_both_dyes():
    centres = np.array([[40.3, 51.7], [120.8, 80.25]])
    img = render_dots(200, 150, centres, [5.0, 118.0])
    hsv = rgb_image_to_hsv(img)
    red = detect_markers(hsv, DYE_PROFILES["uv_red"])
    blue = detect_markers(hsv, DYE_PROFILES["uv_blue"])
    assert len(red) == 1 and len(blue) == 1
    assert np.linalg.norm(red[0].centroid - centres[0]) < 0.5
    assert np.linalg.norm(blue[0].centroid - centres[1]) < 0.5


@pytest.mark.parametrize("scale", [0.6, 0.8, 1.0])
def test_centroid_invariant_to_brightness(scale):
    hsv = np.zeros((30, 30, 3))
    yy, xx = np.mgrid[0:30, 0:30]
    hsv[..., 0] = 118
    hsv[..., 1] = 1
    hsv[..., 2] = np.exp(-((xx - 14.3) ** 2 + (yy - 15.6) ** 2) / 4.5)
    ref = detect_markers(hsv, DyeProfile("b", (110, 125), min_value=0.05))[0].centroid
    hsv[..., 2] *= scale
    got = detect_markers(hsv, DyeProfile("b", (110, 125), min_value=0.05 * scale))[0].centroid
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_exclude_saturated():
    hsv = _block_image(118.0)
    prof = DyeProfile("b", (110, 125), exclude_saturated=True)
    assert detect_markers(hsv, prof) == []


@pytest.mark.parametrize("kwargs", [dict(hue_range=(20, 10)), dict(hue_range=(0, 180)), dict(hue_range=(0, 10), min_value=2)])
def test_profile_validation(kwargs):
    with pytest.raises(ValueError):
        DyeProfile("bad", **kwargs)


def _det(x, y):
    return MarkerDetection(np.array([x, y], dtype=float), 10, "uv_blue")


def test_match_identity():
    preds = [(f"m{k}", np.array([10.0 * k, 5.0])) for k in range(5)]
    dets = [_det(*p) for _, p in preds][::-1]
    pairs = match_detections(dets, preds, 2.0)
    assert {m: tuple(d.centroid) for m, d in pairs} == {m: tuple(p) for m, p in preds}


def test_match_gate():
    preds = [("a", np.array([0.0, 0.0])), ("b", np.array([100.0, 0.0]))]
    assert match_detections([_det(0, 6.0)], preds, 3.0) == []
    with pytest.raises(ValueError):
        match_detections([_det(0, 0)], preds, 0.0)


def _brute_force(dets, preds, gate):
    """Assignment minimising total distance among maximum-cardinality gated matchings."""
    best, best_key = {}, None
    n = len(preds)
    for perm in itertools.permutations(range(len(dets)), n):
        pairs = {}
        cost = 0.0
        for mi, di in enumerate(perm):
            d = np.linalg.norm(preds[mi][1] - dets[di].centroid)
            if d <= gate:
                pairs[preds[mi][0]] = di
                cost += d
        key = (-len(pairs), cost)
        if best_key is None or key < best_key:
            best, best_key = pairs, key
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_match_equals_brute_force_optimum(seed, n):
    rng = np.random.default_rng(seed)
    gate = 4.0
    # unique predictions at least two gates apart, jitter below gate/4
    preds = [(f"m{k}", np.array([k * 3 * gate + rng.uniform(0, gate), rng.uniform(0, 50)])) for k in range(n)]
    order = rng.permutation(n)
    dets = [_det(*(preds[k][1] + rng.uniform(-gate / 4, gate / 4, 2) / np.sqrt(2))) for k in order]
    pos = {id(d): i for i, d in enumerate(dets)}
    got = {m: pos[id(d)] for m, d in match_detections(dets, preds, gate)}
    assert got == _brute_force(dets, preds, gate)


def test_image_and_detection_io(tmp_path):
    img = render_dots(64, 48, [[20.2, 30.6]], 118.0)
    save_image(img, tmp_path / "c_0001.png")
    np.testing.assert_array_equal(load_image(tmp_path / "c_0001.png"), img)
    dets = detect_markers(rgb_image_to_hsv(img), DYE_PROFILES["uv_blue"], camera_id="c", frame_index=1)
    save_detections(dets, tmp_path / "d.json")
    assert '"dye": "uv_blue"' in (tmp_path / "d.json").read_text()
