"""Procedural ID-card scenes standing in for real captures.

Card faces are rendered from scratch (no real documents), warped by a random
similarity + perspective jitter and composited over cluttered backgrounds. An
optional elliptical "finger" occludes part of a card edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .types import CaptureSource, CountryCard, Sample, SampleMeta, Split

ID1_ASPECT = 85.60 / 53.98

# (base face color, header color, photo on the left?) per card type, RGB
_CARD_STYLE = {
    CountryCard.ARG1: ((196, 222, 236), (64, 120, 190), False),
    CountryCard.ARG2: ((228, 232, 214), (90, 150, 200), False),
    CountryCard.CHL1: ((205, 214, 232), (30, 60, 140), True),
    CountryCard.CHL2: ((232, 208, 212), (170, 40, 60), True),
    CountryCard.MEX: ((214, 226, 206), (120, 40, 80), False),
}


@dataclass
class CardTemplate:
    country_card: CountryCard
    rgba: np.ndarray  # H x W x 4 uint8, alpha 255 on the card face


@dataclass
class GeneratorConfig:
    templates: list[CardTemplate]
    backgrounds: list[np.ndarray]
    width: int = 1280
    height: int = 720
    # card long side as a fraction of the canvas' shorter side
    scale_range: tuple[float, float] = (0.25, 0.75)
    rotation_range: tuple[float, float] = (-45.0, 45.0)
    # max corner displacement, fraction of the card diagonal
    perspective_jitter: float = 0.08
    brightness_range: tuple[float, float] = (0.7, 1.3)
    occluder_prob: float = 0.3
    capture_source_probs: dict[CaptureSource, float] = field(
        default_factory=lambda: {c: 0.25 for c in CaptureSource}
    )
    centered: bool = False
    split: Split = Split.TRAIN

    def validate(self) -> None:
        if not self.templates:
            raise ValueError("generator config has no card templates")
        if not self.backgrounds:
            raise ValueError("generator config has no backgrounds")
        if self.width < 8 or self.height < 8:
            raise ValueError("output canvas too small")
        p = np.array(list(self.capture_source_probs.values()), dtype=float)
        if (p < 0).any() or p.sum() <= 0:
            raise ValueError("capture_source_probs must be non-negative with a positive sum")


# --------------------------------------------------------------------------
# card faces


def _rounded_rect_alpha(w: int, h: int, radius: int) -> np.ndarray:
    a = np.zeros((h, w), np.uint8)
    r = max(0, min(radius, w // 2, h // 2))
    cv2.rectangle(a, (r, 0), (w - 1 - r, h - 1), 255, -1)
    cv2.rectangle(a, (0, r), (w - 1, h - 1 - r), 255, -1)
    for cx, cy in ((r, r), (w - 1 - r, r), (r, h - 1 - r), (w - 1 - r, h - 1 - r)):
        cv2.circle(a, (cx, cy), r, 255, -1)
    return a


def _guilloche(w: int, h: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    f1, f2 = rng.uniform(0.02, 0.06, 2)
    ph = rng.uniform(0, 2 * np.pi, 2)
    wave = np.sin(xx * f1 + 3 * np.sin(yy * f2 + ph[0])) * np.cos(yy * f1 * 0.7 + ph[1])
    return (wave > 0.85).astype(np.float32)


def _text_line(img, x, y, length, height, color, rng):
    # blocks of "words"
    cx = x
    while cx < x + length:
        wlen = int(rng.integers(height, height * 5))
        cv2.rectangle(img, (cx, y), (min(cx + wlen, x + length), y + height), color, -1)
        cx += wlen + int(rng.integers(height // 2 + 1, height + 2))


def render_card_template(
    country_card: CountryCard | str,
    rng: np.random.Generator,
    width: int = 428,
) -> CardTemplate:
    """Draw an ID-1 sized card face with rounded corners (RGBA)."""
    country_card = CountryCard(country_card)
    h = int(round(width / ID1_ASPECT))
    base, header, photo_left = _CARD_STYLE[country_card]
    jitter = rng.integers(-12, 13, 3)
    base = tuple(int(np.clip(c + j, 0, 255)) for c, j in zip(base, jitter))
    img = np.empty((h, width, 3), np.uint8)
    img[:] = base

    # faint security print and a diagonal tint gradient
    g = _guilloche(width, h, rng)[..., None]
    tint = np.array(header, np.float32)
    face = img.astype(np.float32)
    face = face * (1 - 0.25 * g) + tint * 0.25 * g
    ramp = np.linspace(0.92, 1.05, width, dtype=np.float32)[None, :, None]
    img = np.clip(face * ramp, 0, 255).astype(np.uint8)

    hb = int(h * rng.uniform(0.14, 0.2))
    cv2.rectangle(img, (0, 0), (width - 1, hb), header, -1)
    _text_line(img, int(width * 0.06), hb // 3, int(width * 0.5), max(3, hb // 3), (245, 245, 245), rng)

    pw, ph = int(width * 0.27), int(h * 0.55)
    px = int(width * 0.05) if photo_left else width - pw - int(width * 0.05)
    py = hb + int(h * 0.08)
    skin = tuple(int(v) for v in rng.integers((150, 110, 90), (230, 190, 160)))
    cv2.rectangle(img, (px, py), (px + pw, py + ph), (180, 180, 190), -1)
    cv2.ellipse(img, (px + pw // 2, py + int(ph * 0.42)), (pw // 3, int(ph * 0.3)), 0, 0, 360, skin, -1)
    cv2.ellipse(img, (px + pw // 2, py + ph), (int(pw * 0.45), int(ph * 0.35)), 0, 180, 360, (40, 40, 60), -1)

    tx = px + pw + int(width * 0.05) if photo_left else int(width * 0.06)
    tlen = int(width * 0.55)
    th = max(3, int(h * 0.035))
    ty = py
    dark = tuple(int(v) for v in rng.integers(10, 70, 3))
    for _ in range(int(rng.integers(4, 7))):
        _text_line(img, tx, ty, int(tlen * rng.uniform(0.5, 1.0)), th, dark, rng)
        ty += int(th * rng.uniform(2.2, 3.0))
        if ty > h - 3 * th:
            break

    if country_card in (CountryCard.CHL1, CountryCard.CHL2):
        # machine-readable zone band
        my = int(h * 0.84)
        cv2.rectangle(img, (0, my), (width - 1, h - 1), tuple(int(c * 0.95) for c in base), -1)
        for k in range(2):
            _text_line(img, int(width * 0.04), my + 4 + k * (th + 4), int(width * 0.9), th, (30, 30, 30), rng)
    else:
        # signature squiggle
        pts = np.stack(
            [np.linspace(tx, tx + tlen * 0.5, 20), h * 0.85 + rng.normal(0, h * 0.02, 20)], 1
        ).astype(np.int32)
        cv2.polylines(img, [pts], False, (20, 30, 90), 2)

    alpha = _rounded_rect_alpha(width, h, radius=int(round(width * 3.18 / 85.6)))
    return CardTemplate(country_card, np.dstack([img, alpha]))


# --------------------------------------------------------------------------
# backgrounds


def _smooth_noise(rng, w, h, cells, channels=3):
    small = rng.random((max(2, h // cells), max(2, w // cells), channels)).astype(np.float32)
    return cv2.resize(small, (w, h), interpolation=cv2.INTER_CUBIC).reshape(h, w, channels)


def render_background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    """A cluttered RGB scene: wood, fabric, marble or desk with papers."""
    kind = int(rng.integers(0, 5))
    base = rng.integers(30, 225, 3).astype(np.float32)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    if kind == 0:  # wood grain
        freq = rng.uniform(0.02, 0.08)
        warp = _smooth_noise(rng, width, height, 64, 1)[..., 0] * 25
        grain = 0.5 + 0.5 * np.sin((yy + warp) * freq + xx * 0.002)
        img = base * (0.65 + 0.45 * grain[..., None])
    elif kind == 1:  # fabric weave
        period = int(rng.integers(3, 9))
        weave = (((xx // period) + (yy // period)) % 2)[..., None]
        img = base * (0.8 + 0.25 * weave) + rng.normal(0, 10, (height, width, 3))
    elif kind == 2:  # marble / stone
        n = _smooth_noise(rng, width, height, int(rng.integers(8, 40)))
        veins = np.abs(np.sin(n[..., :1] * 12))
        img = base * (0.6 + 0.5 * n) * (0.7 + 0.3 * veins)
    elif kind == 3:  # smooth gradient with blotches
        gx = rng.uniform(-1, 1)
        ramp = (xx / width * gx + yy / height * (1 - abs(gx)))[..., None]
        img = base * (0.7 + 0.5 * ramp) + 60 * (_smooth_noise(rng, width, height, 20) - 0.5)
    else:  # tiled floor
        t = int(rng.integers(20, 120))
        lines = ((xx % t) < 2) | ((yy % t) < 2)
        img = base * (0.9 + 0.2 * _smooth_noise(rng, width, height, 50))
        img[lines] *= 0.5
    img = np.clip(img, 0, 255).astype(np.uint8)

    # clutter: papers, objects, cables
    for _ in range(int(rng.integers(2, 9))):
        color = tuple(int(v) for v in rng.integers(0, 256, 3))
        shape = int(rng.integers(0, 3))
        cx, cy = int(rng.integers(0, width)), int(rng.integers(0, height))
        size = int(rng.integers(min(width, height) // 12, min(width, height) // 3))
        if shape == 0:
            box = cv2.boxPoints(((cx, cy), (size, size * rng.uniform(0.3, 1.5)), rng.uniform(0, 180)))
            cv2.fillPoly(img, [box.astype(np.int32)], color)
        elif shape == 1:
            cv2.circle(img, (cx, cy), size // 2, color, -1)
        else:
            pts = np.stack([rng.integers(0, width, 4), rng.integers(0, height, 4)], 1).astype(np.int32)
            cv2.polylines(img, [pts], False, color, int(rng.integers(2, 8)))
    return img


def default_generator_config(
    seed: int = 0,
    width: int = 1280,
    height: int = 720,
    templates_per_card: int = 4,
    n_backgrounds: int = 24,
    **overrides,
) -> GeneratorConfig:
    """Built-in template/background pools, reproducible from `seed`."""
    rng = np.random.default_rng(seed)
    templates = [
        render_card_template(cc, rng)
        for cc in CountryCard
        for _ in range(templates_per_card)
    ]
    backgrounds = [render_background(rng, width, height) for _ in range(n_backgrounds)]
    return GeneratorConfig(templates, backgrounds, width, height, **overrides)


# --------------------------------------------------------------------------
# capture-source looks, applied to the card face only


def _apply_capture_look(face: np.ndarray, source: CaptureSource, rng, donor: np.ndarray) -> np.ndarray:
    f = face.astype(np.float32)
    h, w = f.shape[:2]
    if source is CaptureSource.PRINTED:
        gray = f.mean(axis=2, keepdims=True)
        f = 0.75 * f + 0.25 * gray
        f = 40 + 0.8 * f
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        yy, xx = np.mgrid[0:h, 0:w]
        glare = np.exp(-(((yy - cy) / (0.3 * h)) ** 2 + ((xx - cx) / (0.3 * w)) ** 2))
        f += 90 * glare[..., None]
    elif source is CaptureSource.DISPLAY:
        yy = np.arange(h)[:, None, None]
        f = f * (0.88 + 0.12 * ((yy % 3) == 0)) * np.array([0.9, 0.97, 1.1])
    elif source is CaptureSource.COMPOSITE:
        ph, pw = int(h * rng.uniform(0.2, 0.4)), int(w * rng.uniform(0.2, 0.4))
        y0, x0 = int(rng.integers(0, h - ph)), int(rng.integers(0, w - pw))
        dy = int(rng.integers(0, donor.shape[0] - ph))
        dx = int(rng.integers(0, donor.shape[1] - pw))
        f[y0 : y0 + ph, x0 : x0 + pw] = donor[dy : dy + ph, dx : dx + pw, :3]
    return np.clip(f, 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# scene composition


def _sample_background(bg: np.ndarray, w: int, h: int, rng) -> np.ndarray:
    bh, bw = bg.shape[:2]
    s = max(w / bw, h / bh)
    if s > 1:
        bg = cv2.resize(bg, (int(np.ceil(bw * s)), int(np.ceil(bh * s))), interpolation=cv2.INTER_LINEAR)
        bh, bw = bg.shape[:2]
    y0 = int(rng.integers(0, bh - h + 1))
    x0 = int(rng.integers(0, bw - w + 1))
    crop = bg[y0 : y0 + h, x0 : x0 + w]
    if rng.random() < 0.5:
        crop = crop[:, ::-1]
    return np.ascontiguousarray(crop)


def _card_quad(tw, th, cfg: GeneratorConfig, rng) -> np.ndarray:
    W, H = cfg.width, cfg.height
    s_frac = rng.uniform(*cfg.scale_range)
    s = s_frac * min(W, H) / max(tw, th)
    if tw * s > W + 1e-9 or th * s > H + 1e-9:
        raise ValueError(
            f"scaled template {tw * s:.0f}x{th * s:.0f} does not fit the {W}x{H} canvas"
        )
    theta = np.deg2rad(rng.uniform(*cfg.rotation_range))
    src = np.array([[0, 0], [tw, 0], [tw, th], [0, th]], np.float64)
    c = np.array([tw / 2, th / 2])
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    quad = (src - c) * s @ rot.T
    diag = np.hypot(tw, th) * s
    quad += rng.uniform(-1, 1, (4, 2)) * cfg.perspective_jitter * diag
    lo, hi = quad.min(0), quad.max(0)
    span = hi - lo
    if cfg.centered:
        center = np.array([W / 2, H / 2]) - (lo + hi) / 2
    else:
        cmin = -lo
        cmax = np.array([W, H]) - hi
        # if the rotated card is wider than the canvas, let it overhang evenly
        center = np.where(
            cmax >= cmin,
            [rng.uniform(cmin[0], max(cmin[0], cmax[0])), rng.uniform(cmin[1], max(cmin[1], cmax[1]))],
            (np.array([W, H]) - span) / 2 - lo,
        )
    return quad + center


def _finger(quad: np.ndarray, w: int, h: int, rng) -> np.ndarray:
    occ = np.zeros((h, w), np.uint8)
    i = int(rng.integers(0, 4))
    a, b = quad[i], quad[(i + 1) % 4]
    t = rng.uniform(0.2, 0.8)
    p = a + t * (b - a)
    edge = b - a
    edge_len = float(np.hypot(*edge))
    centroid = quad.mean(0)
    normal = np.array([-edge[1], edge[0]]) / max(edge_len, 1e-6)
    if np.dot(centroid - p, normal) < 0:
        normal = -normal
    other = float(np.hypot(*(quad[(i + 2) % 4] - b)))
    length = other * rng.uniform(0.25, 0.45)
    thick = edge_len * rng.uniform(0.08, 0.14)
    # finger tip reaches into the card, the rest hangs outside
    center = p + normal * (length * rng.uniform(0.0, 0.4))
    angle = np.degrees(np.arctan2(normal[1], normal[0]))
    cv2.ellipse(
        occ,
        (int(round(center[0])), int(round(center[1]))),
        (max(2, int(length)), max(2, int(thick))),
        angle, 0, 360, 1, -1, lineType=cv2.LINE_8,
    )
    return occ


def _choice_weighted(rng, probs: dict):
    keys = list(probs)
    p = np.array([probs[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def _compose(cfg: GeneratorConfig, seed: int, occluder: bool | None):
    cfg.validate()
    rng = np.random.default_rng(seed)
    W, H = cfg.width, cfg.height

    tpl = cfg.templates[int(rng.integers(0, len(cfg.templates)))]
    donor = cfg.templates[int(rng.integers(0, len(cfg.templates)))]
    bg = cfg.backgrounds[int(rng.integers(0, len(cfg.backgrounds)))]
    source = CaptureSource(_choice_weighted(rng, cfg.capture_source_probs))
    face = _apply_capture_look(tpl.rgba[..., :3], source, rng, donor.rgba)
    th, tw = face.shape[:2]

    quad = _card_quad(tw, th, cfg, rng)
    src = np.array([[0, 0], [tw, 0], [tw, th], [0, th]], np.float32)
    M = cv2.getPerspectiveTransform(src, quad.astype(np.float32))
    warped = cv2.warpPerspective(face, M, (W, H), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT)
    alpha = cv2.warpPerspective(
        tpl.rgba[..., 3].astype(np.float32) / 255.0, M, (W, H),
        flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT,
    )

    background = _sample_background(bg, W, H, rng).astype(np.float32)
    a = alpha[..., None]
    img = warped.astype(np.float32) * a + background * (1 - a)

    # uneven illumination over the whole frame
    b = rng.uniform(*cfg.brightness_range)
    gx, gy = rng.uniform(-0.15, 0.15, 2)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float32)
    light = b * (1 + gx * (xx / W - 0.5) + gy * (yy / H - 0.5))
    img = img * light[..., None]

    # always drawn so the random stream does not depend on the occluder switch
    finger_draw = rng.random() < cfg.occluder_prob
    finger = _finger(quad, W, H, rng).astype(bool)
    skin = rng.integers((150, 100, 80), (235, 190, 160)).astype(np.float32)
    shade = rng.uniform(0.85, 1.0)
    if finger_draw if occluder is None else occluder:
        img[finger] = skin * shade
        alpha = np.where(finger, 0.0, alpha).astype(np.float32)

    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    meta = SampleMeta(f"synth_{seed:06d}", tpl.country_card, source, cfg.split)
    return img, alpha, meta


def generate_synthetic_sample(cfg: GeneratorConfig, seed: int, occluder: bool | None = None) -> Sample:
    """Compose one scene; identical (cfg, seed) always gives an identical Sample.

    ``occluder`` forces the finger on or off; by default it is drawn with
    ``cfg.occluder_prob``. The random stream is the same either way, so an
    occluded and an unoccluded render of one seed differ only by the finger.
    The mask is exactly the set of pixels where the visible card alpha > 0.5.
    """
    img, alpha, meta = _compose(cfg, seed, occluder)
    return Sample(img, (alpha > 0.5).astype(np.uint8), meta)


def card_visibility(cfg: GeneratorConfig, seed: int, occluder: bool | None = None) -> np.ndarray:
    """Visible-card compositing alpha of the scene `generate_synthetic_sample` renders."""
    return _compose(cfg, seed, occluder)[1]
