import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sasssl.errors import ConfigurationError, InputError, NumericalError
from sasssl.rxdetect import (
    Detection,
    RxConfig,
    detect,
    extract_snippet,
    label_detections,
    resize_bilinear,
    rx_score_map,
)
from sasssl.synthgen import GroundTruthObject, MultibandImage

GLOBAL_RAW = RxConfig(background_mode="global", smoothing_radius=0, regularization_epsilon=0.0)


def brute_force_rx(lf, hf):
    x = np.stack([lf.ravel(), hf.ravel()], axis=1)
    mu = x.mean(axis=0)
    cov = np.cov(x.T, bias=True)
    inv = np.linalg.inv(cov)
    d = x - mu
    return np.array([row @ inv @ row for row in d]).reshape(lf.shape)


def random_image(rng, shape=(8, 8)):
    return MultibandImage(rng.exponential(size=shape), rng.exponential(size=shape))


def test_global_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        img = random_image(rng)
        np.testing.assert_allclose(rx_score_map(img, GLOBAL_RAW), brute_force_rx(img.lf, img.hf), rtol=1e-9)


def brute_force_local(lf, hf, guard, outer):
    h, w = lf.shape
    out = np.zeros_like(lf)
    for r in range(h):
        for c in range(w):
            rows = slice(max(r - outer, 0), r + outer + 1)
            cols = slice(max(c - outer, 0), c + outer + 1)
            mask = np.ones(lf.shape, bool)
            mask[:] = False
            mask[rows, cols] = True
            mask[max(r - guard, 0) : r + guard + 1, max(c - guard, 0) : c + guard + 1] = False
            x = np.stack([lf[mask], hf[mask]], axis=1)
            mu = x.mean(axis=0)
            cov = np.cov(x.T, bias=True)
            d = np.array([lf[r, c], hf[r, c]]) - mu
            out[r, c] = d @ np.linalg.inv(cov) @ d
    return out


def test_local_annulus_matches_brute_force():
    rng = np.random.default_rng(1)
    img = random_image(rng, (20, 17))
    cfg = RxConfig(guard_radius=1, background_radius=4, smoothing_radius=0, regularization_epsilon=0.0)
    np.testing.assert_allclose(rx_score_map(img, cfg), brute_force_local(img.lf, img.hf, 1, 4), rtol=1e-8)


def test_constant_image_scores_zero():
    img = MultibandImage(np.full((16, 16), 3.0), np.full((16, 16), 2.0))
    for mode in ("global", "local"):
        cfg = RxConfig(background_mode=mode, regularization_epsilon=1e-3, guard_radius=1, background_radius=3)
        assert np.all(rx_score_map(img, cfg) == 0.0)


def test_singular_covariance_raises():
    img = MultibandImage(np.full((8, 8), 1.0), np.full((8, 8), 1.0))
    with pytest.raises(NumericalError):
        rx_score_map(img, GLOBAL_RAW)


def test_lone_outlier_is_argmax():
    rng = np.random.default_rng(2)
    lf = 1.0 + 0.01 * rng.random((32, 32))
    hf = 1.0 + 0.01 * rng.random((32, 32))
    lf[10, 20] *= 100
    hf[10, 20] *= 100
    score = rx_score_map(MultibandImage(lf, hf), RxConfig(background_mode="global", smoothing_radius=0))
    assert np.unravel_index(np.argmax(score), score.shape) == (10, 20)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 100.0), st.floats(-5.0, 5.0))
def test_global_scores_shift_and_scale_invariant(seed, scale, shift):
    rng = np.random.default_rng(seed)
    img = random_image(rng, (12, 12))
    base = rx_score_map(img, GLOBAL_RAW)
    scaled = rx_score_map(MultibandImage(img.lf * scale, img.hf * scale), GLOBAL_RAW)
    shifted = rx_score_map(MultibandImage(img.lf + shift + 10, img.hf), GLOBAL_RAW)
    np.testing.assert_allclose(scaled, base, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(shifted, base, rtol=1e-9, atol=1e-9)


def test_invalid_annulus_rejected():
    with pytest.raises(ConfigurationError):
        RxConfig(guard_radius=4, background_radius=4).validate()


def test_detect_below_threshold_empty():
    assert detect(np.full((10, 10), 0.5), RxConfig(score_threshold=1.0)) == []


def test_detect_single_peak():
    s = np.zeros((20, 20))
    s[7, 9] = 5.0
    assert detect(s, RxConfig(score_threshold=1.0, nms_radius=3)) == [Detection((7, 9), 5.0)]


def test_nms_keeps_higher_peak():
    s = np.zeros((20, 20))
    s[5, 5] = 4.0
    s[5, 8] = 6.0
    dets = detect(s, RxConfig(score_threshold=1.0, nms_radius=5))
    assert [d.center for d in dets] == [(5, 8)]


def test_nms_tie_break_smaller_row_col():
    # Hand enumeration: candidates (5,8) and (6,5) both score 6; visit order
    # is (5,8) then (6,5); distance sqrt(10) < 5 so (6,5) is suppressed.
    s = np.zeros((20, 20))
    s[6, 5] = 6.0
    s[5, 8] = 6.0
    dets = detect(s, RxConfig(score_threshold=1.0, nms_radius=5))
    assert [d.center for d in dets] == [(5, 8)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1.0, 8.0))
def test_nms_spacing_and_order(seed, radius):
    s = np.random.default_rng(seed).random((30, 30))
    dets = detect(s, RxConfig(score_threshold=0.5, nms_radius=radius))
    scores = [d.score for d in dets]
    assert scores == sorted(scores, reverse=True)
    for i, a in enumerate(dets):
        for b in dets[i + 1 :]:
            assert np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) >= radius


def test_extract_uniform_image():
    img = MultibandImage(np.full((100, 100), 2.5), np.full((100, 100), 2.5))
    snip = extract_snippet(img, (50, 50), 16, source_extent=40)
    np.testing.assert_allclose(snip.bands, 2.5, rtol=1e-12)


def test_extract_identity_when_extent_equals_size():
    rng = np.random.default_rng(3)
    img = random_image(rng, (64, 64))
    snip = extract_snippet(img, (30, 33), 16)
    np.testing.assert_allclose(snip.bands[0], img.lf[22:38, 25:41], atol=1e-12)
    np.testing.assert_allclose(snip.bands[1], img.hf[22:38, 25:41], atol=1e-12)


@pytest.mark.parametrize("size, extent", [(8, 8), (16, 30), (64, 64), (32, 200)])
def test_extract_shape_and_band_order(size, extent):
    rng = np.random.default_rng(4)
    lf = rng.random((100, 120))
    img = MultibandImage(lf, lf * 0 + 7.0)
    snip = extract_snippet(img, (0, 119), size, extent)
    assert snip.bands.shape == (2, size, size)
    assert np.all(snip.bands >= 0)
    # HF band is constant 7 inside the image (zero only where padded).
    assert snip.bands[1].max() == pytest.approx(7.0)


def test_extract_border_clamps_window():
    rng = np.random.default_rng(5)
    img = random_image(rng, (40, 40))
    snip = extract_snippet(img, (0, 0), 16)
    np.testing.assert_allclose(snip.bands[0], img.lf[:16, :16], atol=1e-12)


def test_extract_rejects_outside_center_and_odd_size():
    img = MultibandImage(np.ones((20, 20)), np.ones((20, 20)))
    with pytest.raises(InputError):
        extract_snippet(img, (25, 5), 8)
    with pytest.raises(ConfigurationError):
        extract_snippet(img, (5, 5), 9)


def test_extract_idempotent_at_native_extent():
    rng = np.random.default_rng(6)
    img = random_image(rng, (64, 64))
    first = extract_snippet(img, (20, 40), 16)
    again = extract_snippet(MultibandImage(first.bands[0], first.bands[1]), (8, 8), 16)
    np.testing.assert_array_equal(again.bands, first.bands)


def test_resize_preserves_constants():
    out = resize_bilinear(np.full((2, 13, 29), 4.0), 16)
    np.testing.assert_allclose(out, 4.0, rtol=1e-12)


def obj(r, c, kind="object"):
    return GroundTruthObject((r, c), kind, 5.0)


def test_labels_empty_truth():
    dets = [Detection((1, 1), 3.0), Detection((9, 9), 2.0)]
    assert [lab for _, lab in label_detections(dets, [], 5.0)] == [0, 0]


def test_label_exact_hit():
    assert label_detections([Detection((10, 10), 1.0)], [obj(10, 10)], 3.0)[0][1] == 1


def test_nearest_detection_wins():
    # Oracle: distances 4 and 2 to the single object; nearest-first gives the
    # second detection the match.
    dets = [Detection((10, 14), 9.0), Detection((10, 8), 1.0)]
    assert [lab for _, lab in label_detections(dets, [obj(10, 10)], 5.0)] == [0, 1]


def test_clutter_never_labeled_positive():
    assert label_detections([Detection((10, 10), 1.0)], [obj(10, 10, "clutter")], 3.0)[0][1] == 0
