import dataclasses

import numpy as np
import pytest

from idseg.data.synth import card_visibility, generate_synthetic_sample, render_card_template
from idseg.data.types import CaptureSource


def test_deterministic(small_cfg):
    a = generate_synthetic_sample(small_cfg, 11)
    b = generate_synthetic_sample(small_cfg, 11)
    assert (a.image == b.image).all() and (a.mask == b.mask).all() and a.meta == b.meta


def test_identity_placement_is_template_support(small_cfg):
    tpl = render_card_template("CHL1", np.random.default_rng(0), width=120)
    th, tw = tpl.rgba.shape[:2]
    W, H = small_cfg.width, small_cfg.height
    # card long side = scale * shorter canvas side; force the template's own size
    scale = tw / min(W, H)
    cfg = dataclasses.replace(
        small_cfg,
        templates=[tpl],
        scale_range=(scale, scale),
        rotation_range=(0.0, 0.0),
        perspective_jitter=0.0,
        occluder_prob=0.0,
        centered=True,
        capture_source_probs={CaptureSource.DIGITAL: 1.0},
    )
    s = generate_synthetic_sample(cfg, 0)
    support = (tpl.rgba[..., 3] > 127).astype(np.uint8)
    y0, x0 = (H - th) // 2, (W - tw) // 2
    expected = np.zeros((H, W), np.uint8)
    expected[y0 : y0 + th, x0 : x0 + tw] = support
    assert np.abs(s.mask.astype(int) - expected).sum() <= 0.01 * support.sum()
    # rounded corners: the corner pixel itself is not card
    assert support[0, 0] == 0 and support[th // 2, tw // 2] == 1


def test_occluder_removes_pixels(small_cfg):
    cfg = dataclasses.replace(small_cfg, occluder_prob=1.0)
    for seed in range(5):
        with_occ = generate_synthetic_sample(cfg, seed, occluder=True)
        without = generate_synthetic_sample(cfg, seed, occluder=False)
        assert with_occ.mask.sum() < without.mask.sum()


def test_mask_is_visible_alpha(small_cfg):
    for seed in range(4):
        s = generate_synthetic_sample(small_cfg, seed)
        alpha = card_visibility(small_cfg, seed)
        assert ((alpha > 0.5) == s.mask.astype(bool)).all()


def test_template_too_large(small_cfg):
    cfg = dataclasses.replace(small_cfg, scale_range=(3.0, 3.0))
    with pytest.raises(ValueError):
        generate_synthetic_sample(cfg, 0)


def test_empty_pools(small_cfg):
    with pytest.raises(ValueError):
        generate_synthetic_sample(dataclasses.replace(small_cfg, templates=[]), 0)
    with pytest.raises(ValueError):
        generate_synthetic_sample(dataclasses.replace(small_cfg, backgrounds=[]), 0)


def test_template_has_card_aspect():
    t = render_card_template("CHL1", np.random.default_rng(0))
    h, w = t.rgba.shape[:2]
    assert abs(w / h - 85.6 / 53.98) < 0.02
