import dataclasses

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idseg.data.synth import default_generator_config, generate_synthetic_sample, render_background, render_card_template
from idseg.evaluation import iou
from idseg.models.hog_svm import (
    HogParams,
    HogSvmBaseline,
    cell_histograms,
    fit_hog_baseline,
    hog_descriptor,
    mask_bbox,
    sliding_window_segment,
    train_svm,
    training_windows,
)


def brute_cell_histograms(gray, cell, bins):
    """Pixel-by-pixel voting, written without any array tricks."""
    h, w = gray.shape
    ny, nx = h // cell, w // cell
    out = np.zeros((ny, nx, bins))
    width = 180.0 / bins
    for y in range(ny * cell):
        for x in range(nx * cell):
            gx = gray[y, x + 1] - gray[y, x - 1] if 0 < x < w - 1 else 0.0
            gy = gray[y + 1, x] - gray[y - 1, x] if 0 < y < h - 1 else 0.0
            mag = (gx * gx + gy * gy) ** 0.5
            ang = np.degrees(np.arctan2(gy, gx)) % 180.0
            pos = ang / width - 0.5
            lo = int(np.floor(pos))
            frac = pos - lo
            out[y // cell, x // cell, lo % bins] += mag * (1 - frac)
            out[y // cell, x // cell, (lo + 1) % bins] += mag * frac
    return out


def test_descriptor_length_pedestrian_window():
    p = HogParams(window=(64, 128), cell=8, block=2, block_stride=1, bins=9)
    patch = np.random.default_rng(0).integers(0, 256, (128, 64)).astype(np.uint8)
    assert hog_descriptor(patch, p).shape == (7 * 15 * 2 * 2 * 9,) == (p.descriptor_length,)


def test_constant_patch_gives_zeros():
    p = HogParams()
    assert not hog_descriptor(np.full((96, 152, 3), 77, np.uint8), p).any()


def test_size_mismatch():
    with pytest.raises(ValueError):
        hog_descriptor(np.zeros((96, 150)), HogParams())
    with pytest.raises(ValueError):
        HogParams(window=(150, 96))
    with pytest.raises(ValueError):
        HogParams(bins=1)


def test_cell_histograms_match_brute_force():
    g = np.random.default_rng(1).uniform(0, 255, (16, 24))
    assert np.allclose(cell_histograms(g, 8, 9), brute_cell_histograms(g, 8, 9), atol=1e-9)


def test_rotation_by_180_preserves_cell_histogram_multiset():
    rng = np.random.default_rng(2)
    for _ in range(5):
        g = rng.uniform(0, 255, (16, 16))
        a = brute_cell_histograms(g, 8, 9).reshape(-1, 9)
        b = cell_histograms(np.rot90(g, 2).copy(), 8, 9).reshape(-1, 9)
        key = lambda h: sorted(map(tuple, np.round(h, 6)))  # noqa: E731
        assert key(a) == key(b)


@settings(max_examples=20)
@given(
    cell=st.sampled_from([4, 6, 8]),
    cx=st.integers(2, 8),
    cy=st.integers(2, 8),
    block=st.integers(1, 2),
    stride=st.integers(1, 2),
    bins=st.integers(2, 12),
)
def test_length_formula(cell, cx, cy, block, stride, bins):
    p = HogParams(window=(cx * cell, cy * cell), cell=cell, block=block, block_stride=stride, bins=bins,
                  window_stride=cell * stride)
    bx = (cx - block) // stride + 1
    by = (cy - block) // stride + 1
    patch = np.random.default_rng(0).uniform(0, 255, (cy * cell, cx * cell))
    assert hog_descriptor(patch, p).shape == (bx * by * block * block * bins,)


def test_svm_separable_pair():
    clf = train_svm([[1.0, 0.0], [-1.0, 0.0]], ["card", "background"])
    s = clf.decision(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert s[0] > 0 > s[1]


def test_svm_conflicting_duplicate_scores_near_zero():
    X = [[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
    clf = train_svm(X, [1, 0, 1, 0])
    s = clf.decision(np.array(X))
    assert abs(s[2]) < min(abs(s[0]), abs(s[1]))


def test_svm_single_class_rejected():
    with pytest.raises(ValueError):
        train_svm([[0.0], [1.0]], [1, 1])


@pytest.fixture(scope="module")
def aligned_cfg():
    return default_generator_config(
        0, 320, 180, templates_per_card=2, n_backgrounds=8,
        rotation_range=(0.0, 0.0), perspective_jitter=0.0, occluder_prob=0.0,
    )


@pytest.fixture(scope="module")
def aligned_baseline(aligned_cfg):
    train = [generate_synthetic_sample(aligned_cfg, s) for s in range(30)]
    return fit_hog_baseline(train, seed=0)


def test_windows_classified(aligned_cfg):
    samples = [generate_synthetic_sample(aligned_cfg, 500 + s) for s in range(12)]
    X, y = training_windows(samples, HogParams(), seed=1, jitter=4, negatives_per_image=8, near_misses=4)
    assert len(y) >= 200 and set(y) == {0, 1}
    clf = train_svm(X[:200], y[:200], c=0.1)
    assert np.mean(clf.predict(X[:200]) == y[:200]) >= 0.95


def _card_in_window(params, seed=0):
    """A card whose bounding box is exactly one scan window."""
    rng = np.random.default_rng(seed)
    H, W = 180, 320
    scale = params.scales[4]
    fy = params.window[1] / (scale * H)
    fx = fy
    ww, wh = params.window[0] / fx, params.window[1] / fy
    x0 = 5 * params.window_stride / fx
    y0 = 3 * params.window_stride / fy
    tpl = render_card_template("CHL2", rng, width=int(round(ww)))
    rgba = cv2.resize(tpl.rgba, (int(round(ww)), int(round(wh))), interpolation=cv2.INTER_AREA)
    img = render_background(rng, W, H)
    xi, yi = int(round(x0)), int(round(y0))
    a = rgba[..., 3:4] / 255.0
    region = img[yi : yi + rgba.shape[0], xi : xi + rgba.shape[1]]
    region[:] = (a * rgba[..., :3] + (1 - a) * region).astype(np.uint8)
    mask = np.zeros((H, W), np.uint8)
    mask[yi : yi + rgba.shape[0], xi : xi + rgba.shape[1]] = rgba[..., 3] > 127
    return img, mask


def test_card_filling_a_window_is_found(aligned_baseline):
    for seed in range(3):
        img, mask = _card_in_window(aligned_baseline.params, seed)
        pred, found = aligned_baseline.segment(img)
        assert found
        assert iou(pred, mask) >= 0.8


def test_held_out_aligned_scenes(aligned_baseline, aligned_cfg):
    scores = []
    for s in range(4):
        smp = generate_synthetic_sample(aligned_cfg, 3000 + s)
        scores.append(iou(aligned_baseline.predict_mask(smp.image), smp.mask))
    assert np.mean(scores) >= 0.8


def test_noise_image(aligned_baseline):
    noise = np.random.default_rng(9).integers(0, 256, (180, 320, 3), dtype=np.uint8)
    pred, found = aligned_baseline.segment(noise)
    if found:
        # there is no card, so any detection covers pure background
        assert pred.sum() < 0.2 * pred.size
    else:
        assert not pred.any()


def _is_rectangle_or_empty(m):
    if not m.any():
        return True
    x0, y0, x1, y1 = mask_bbox(m)
    return bool(m[y0:y1, x0:x1].all())


def test_output_is_rectangle(aligned_baseline, aligned_cfg):
    for s in range(3):
        smp = generate_synthetic_sample(dataclasses.replace(aligned_cfg, rotation_range=(-30, 30)), 4000 + s)
        assert _is_rectangle_or_empty(aligned_baseline.predict_mask(smp.image))


def test_image_smaller_than_windows(aligned_baseline):
    with pytest.raises(ValueError):
        sliding_window_segment(np.zeros((10, 10, 3), np.uint8), aligned_baseline.clf,
                               HogParams(scales=(1.5,)))


def test_save_load(tmp_path, aligned_baseline):
    aligned_baseline.save(tmp_path / "hog.json")
    back = HogSvmBaseline.load(tmp_path / "hog.json")
    assert back.params == aligned_baseline.params
    assert np.array_equal(back.clf.weights, aligned_baseline.clf.weights)
