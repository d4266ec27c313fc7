"""Coarse baseline: HOG descriptors, a linear SVM and a multi-scale sliding window.

The best window becomes an axis-aligned rectangle mask.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np
from sklearn.svm import LinearSVC

from ..data.types import Sample

log = logging.getLogger(__name__)

L2HYS_CLIP = 0.2
_EPS = 1e-5
CARD, BACKGROUND = 1, 0
NEG_IOU = 0.5


@dataclass(frozen=True)
class HogParams:
    window: tuple[int, int] = (152, 96)  # (w, h)
    cell: int = 8
    block: int = 2
    block_stride: int = 1
    bins: int = 9
    # window height as a fraction of the image height
    scales: tuple[float, ...] = tuple(np.round(np.geomspace(0.14, 0.75, 9), 4).tolist())
    window_stride: int = 8
    # window width/height in the image relative to window[0]/window[1]
    aspects: tuple[float, ...] = (1.0, 0.8, 0.63)

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(v) for v in self.window))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "aspects", tuple(float(a) for a in self.aspects))
        w, h = self.window
        if w % self.cell or h % self.cell:
            raise ValueError(f"window {self.window} not divisible by cell {self.cell}")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.block < 1 or self.block_stride < 1:
            raise ValueError("block and block_stride must be >= 1")
        if self.block > min(w, h) // self.cell:
            raise ValueError("block larger than window")
        if self.window_stride % self.cell:
            raise ValueError("window_stride must be a multiple of cell")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive")
        if not self.aspects or any(a <= 0 for a in self.aspects):
            raise ValueError("aspects must be positive")

    @property
    def window_cells(self) -> tuple[int, int]:
        return self.window[1] // self.cell, self.window[0] // self.cell

    @property
    def blocks_per_window(self) -> tuple[int, int]:
        cy, cx = self.window_cells
        return (cy - self.block) // self.block_stride + 1, (cx - self.block) // self.block_stride + 1

    @property
    def descriptor_length(self) -> int:
        by, bx = self.blocks_per_window
        return by * bx * self.block * self.block * self.bins


def to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image.astype(np.float64)
    return image[..., :3].astype(np.float64) @ np.array([0.299, 0.587, 0.114])


def gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centered [-1, 0, 1] differences; zero on the one-pixel border."""
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[:, 1:-1] = gray[:, 2:] - gray[:, :-2]
    gy[1:-1, :] = gray[2:, :] - gray[:-2, :]
    return gx, gy


def cell_histograms(gray: np.ndarray, cell: int, bins: int) -> np.ndarray:
    """(H//cell, W//cell, bins) magnitude-weighted unsigned orientation histograms.

    Votes are split linearly between the two nearest bin centers (wrapping at 180).
    """
    gx, gy = gradients(np.asarray(gray, dtype=np.float64))
    ny, nx = gray.shape[0] // cell, gray.shape[1] // cell
    gx, gy = gx[: ny * cell, : nx * cell], gy[: ny * cell, : nx * cell]
    mag = np.hypot(gx, gy)
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    pos = ang / (180.0 / bins) - 0.5
    lo = np.floor(pos)
    w_hi = pos - lo
    lo = np.mod(lo.astype(np.int64), bins)
    hi = np.mod(lo + 1, bins)
    rows = np.arange(ny * cell) // cell
    cols = np.arange(nx * cell) // cell
    cid = (rows[:, None] * nx + cols[None, :]) * bins
    hist = np.bincount((cid + lo).ravel(), (mag * (1 - w_hi)).ravel(), minlength=ny * nx * bins)
    hist += np.bincount((cid + hi).ravel(), (mag * w_hi).ravel(), minlength=ny * nx * bins)
    return hist.reshape(ny, nx, bins)


def l2hys(v: np.ndarray) -> np.ndarray:
    """L2-Hys over the last axis."""
    v = v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True) + _EPS**2)
    v = np.minimum(v, L2HYS_CLIP)
    return v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True) + _EPS**2)


def normalized_blocks(cells: np.ndarray, block: int, block_stride: int) -> np.ndarray:
    """(by, bx, block*block*bins) normalized block vectors over a cell grid."""
    ny, nx, bins = cells.shape
    by = (ny - block) // block_stride + 1
    bx = (nx - block) // block_stride + 1
    out = np.empty((by, bx, block, block, bins))
    for dy in range(block):
        for dx in range(block):
            out[:, :, dy, dx] = cells[dy : dy + by * block_stride : block_stride, dx : dx + bx * block_stride : block_stride]
    return l2hys(out.reshape(by, bx, -1))


def hog_descriptor(window: np.ndarray, params: HogParams) -> np.ndarray:
    gray = to_gray(window)
    w, h = params.window
    if gray.shape != (h, w):
        raise ValueError(f"patch is {gray.shape[1]}x{gray.shape[0]}, params expect {w}x{h}")
    cells = cell_histograms(gray, params.cell, params.bins)
    return normalized_blocks(cells, params.block, params.block_stride).ravel()


# --------------------------------------------------------------------------
# classifier


@dataclass
class LinearClassifier:
    weights: np.ndarray
    bias: float

    def decision(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return (self.decision(features) > 0).astype(np.int64)


def _label(v) -> int:
    if isinstance(v, str):
        if v not in ("card", "background"):
            raise ValueError(f"unknown label {v!r}")
        return CARD if v == "card" else BACKGROUND
    return CARD if int(v) == CARD else BACKGROUND


def train_svm(features, labels, c: float = 1.0, max_iter: int = 20000, seed: int = 0) -> LinearClassifier:
    """Linear max-margin classifier with hinge loss; positive scores mean card."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must have uniform length")
    y = np.array([_label(v) for v in labels])
    if len(y) != len(X):
        raise ValueError("features and labels differ in length")
    if len(np.unique(y)) < 2:
        raise ValueError("train_svm needs at least one card and one background example")
    svm = LinearSVC(loss="hinge", C=c, dual=True, max_iter=max_iter, random_state=seed)
    svm.fit(X, y)
    return LinearClassifier(svm.coef_[0].astype(np.float64), float(svm.intercept_[0]))


# --------------------------------------------------------------------------
# scanning


@dataclass(frozen=True)
class Detection:
    x0: float
    y0: float
    x1: float
    y1: float
    score: float

    def box(self) -> tuple[float, float, float, float]:
        return self.x0, self.y0, self.x1, self.y1


def box_iou(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def nms(dets: list[Detection], overlap: float = 0.3) -> list[Detection]:
    """Greedy non-maximum suppression, highest score first."""
    keep: list[Detection] = []
    for d in sorted(dets, key=lambda d: -d.score):
        if all(box_iou(d.box(), k.box()) <= overlap for k in keep):
            keep.append(d)
    return keep


def _resize_factors(shape: tuple[int, int], params: HogParams, scale: float, aspect: float) -> tuple[float, float]:
    h = shape[0]
    fy = params.window[1] / (scale * h)
    fx = fy / aspect
    return fx, fy


def scan(image: np.ndarray, clf: LinearClassifier, params: HogParams) -> np.ndarray:
    """Score every window at every scale and aspect.

    Returns an (N, 5) table of x0, y0, x1, y1, score in original-image coordinates.
    """
    gray = to_gray(image)
    H, W = gray.shape
    wcy, wcx = params.window_cells
    by, bx = params.blocks_per_window
    bdim = params.block * params.block * params.bins
    wmat = clf.weights.reshape(by, bx, bdim)
    step = params.window_stride // params.cell
    rows: list[np.ndarray] = []
    n_valid = 0
    for scale in params.scales:
        for aspect in params.aspects:
            fx, fy = _resize_factors((H, W), params, scale, aspect)
            rw, rh = int(round(W * fx)), int(round(H * fy))
            if rw < params.window[0] or rh < params.window[1]:
                continue
            n_valid += 1
            g = cv2.resize(gray.astype(np.float32), (rw, rh), interpolation=cv2.INTER_AREA if fx < 1 else cv2.INTER_LINEAR)
            blocks = normalized_blocks(cell_histograms(g, params.cell, params.bins), params.block, params.block_stride)
            # windows anchored on cells (y, x) with step; window covers blocks [y*s/bs, +by)
            bs = params.block_stride
            ny_w = (g.shape[0] // params.cell - wcy) // step + 1
            nx_w = (g.shape[1] // params.cell - wcx) // step + 1
            if ny_w <= 0 or nx_w <= 0:
                continue
            scores = np.full((ny_w, nx_w), clf.bias)
            if step % bs:
                raise ValueError("window_stride must be a multiple of block_stride * cell")
            s = step // bs
            for dy in range(by):
                for dx in range(bx):
                    sub = blocks[dy : dy + (ny_w - 1) * s + 1 : s, dx : dx + (nx_w - 1) * s + 1 : s]
                    scores += sub @ wmat[dy, dx]
            iy, ix = np.unravel_index(np.arange(scores.size), scores.shape)
            x0 = ix * params.window_stride / fx
            y0 = iy * params.window_stride / fy
            ww, wh = params.window[0] / fx, params.window[1] / fy
            rows.append(np.stack([x0, y0, x0 + ww, y0 + wh, scores.ravel()], axis=1))
    if n_valid == 0:
        raise ValueError(f"image {W}x{H} is smaller than every scaled window")
    return np.concatenate(rows) if rows else np.zeros((0, 5))


def top_detections(table: np.ndarray, k: int, min_score: float = -np.inf) -> list[Detection]:
    table = table[table[:, 4] > min_score]
    order = np.argsort(-table[:, 4], kind="stable")[:k]
    return [Detection(*map(float, table[i])) for i in order]


def box_mask(box, height: int, width: int) -> np.ndarray:
    """Rectangle mask over pixels whose centers fall inside box."""
    x0, y0, x1, y1 = box
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    return ((ys[:, None] >= y0) & (ys[:, None] < y1) & (xs[None, :] >= x0) & (xs[None, :] < x1)).astype(np.uint8)


def sliding_window_segment(
    image: np.ndarray, clf: LinearClassifier, params: HogParams, threshold: float = 0.0
) -> tuple[np.ndarray, bool]:
    """Returns (mask, detected). No window above threshold gives an all-zeros mask."""
    h, w = image.shape[:2]
    dets = top_detections(scan(image, clf, params), 200, threshold)
    if not dets:
        return np.zeros((h, w), np.uint8), False
    best = nms(dets)[0]
    return box_mask(best.box(), h, w), True


# --------------------------------------------------------------------------
# training data and the packaged baseline


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def crop_window(gray: np.ndarray, box, params: HogParams) -> np.ndarray:
    """Crop box (clipped to the image, zero padded outside) and resize to the descriptor window."""
    H, W = gray.shape
    x0, y0, x1, y1 = (int(round(v)) for v in box)
    x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)
    pad = np.zeros((y1 - y0, x1 - x0), np.float32)
    sx0, sy0, sx1, sy1 = max(x0, 0), max(y0, 0), min(x1, W), min(y1, H)
    if sx1 > sx0 and sy1 > sy0:
        pad[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = gray[sy0:sy1, sx0:sx1]
    interp = cv2.INTER_AREA if pad.shape[1] > params.window[0] else cv2.INTER_LINEAR
    return cv2.resize(pad, params.window, interpolation=interp)


def _random_box(rng: np.random.Generator, H: int, W: int, params: HogParams):
    scale = rng.uniform(min(params.scales), max(params.scales))
    aspect = params.aspects[int(rng.integers(len(params.aspects)))]
    bh = scale * H
    bw = bh * params.window[0] / params.window[1] * aspect
    bw, bh = min(bw, W), min(bh, H)
    x0 = rng.uniform(0, W - bw)
    y0 = rng.uniform(0, H - bh)
    return x0, y0, x0 + bw, y0 + bh


def training_windows(
    samples: list[Sample],
    params: HogParams,
    seed: int = 0,
    jitter: int = 4,
    negatives_per_image: int = 12,
    near_misses: int = 4,
) -> tuple[np.ndarray, np.ndarray]:
    """Card bounding boxes (plus jittered copies) as positives; random and near-miss windows
    overlapping the card by less than NEG_IOU as negatives."""
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for s in samples:
        gray = to_gray(s.image).astype(np.float32)
        H, W = gray.shape
        bb = mask_bbox(s.mask)
        boxes = []
        if bb is not None:
            bw, bh = bb[2] - bb[0], bb[3] - bb[1]
            boxes.append((bb, CARD))
            for _ in range(jitter):
                d = rng.uniform(-0.05, 0.05, 4) * np.array([bw, bh, bw, bh])
                boxes.append((tuple(np.asarray(bb) + d), CARD))
            # near misses teach the classifier to localize, not just to fire on card texture
            for _ in range(near_misses):
                for _try in range(20):
                    d = rng.uniform(-0.5, 0.5, 4) * np.array([bw, bh, bw, bh])
                    box = tuple(np.asarray(bb) + d)
                    if box[2] - box[0] > 8 and box[3] - box[1] > 8 and box_iou(box, bb) < NEG_IOU:
                        boxes.append((box, BACKGROUND))
                        break
        n_neg = 0
        tries = 0
        while n_neg < negatives_per_image and tries < 10 * negatives_per_image:
            tries += 1
            box = _random_box(rng, H, W, params)
            if bb is None or box_iou(box, bb) < NEG_IOU:
                boxes.append((box, BACKGROUND))
                n_neg += 1
        for box, lab in boxes:
            feats.append(hog_descriptor(crop_window(gray, box, params), params))
            labels.append(lab)
    return np.asarray(feats), np.asarray(labels)


@dataclass
class HogSvmBaseline:
    params: HogParams
    clf: LinearClassifier
    threshold: float = 0.0
    info: dict = field(default_factory=dict)

    def segment(self, image: np.ndarray) -> tuple[np.ndarray, bool]:
        return sliding_window_segment(image, self.clf, self.params, self.threshold)

    def predict_mask(self, image: np.ndarray) -> np.ndarray:
        return self.segment(image)[0]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        doc = {
            "format": "idseg-hog-svm",
            "version": 1,
            "params": asdict(self.params),
            "weights": self.clf.weights.tolist(),
            "bias": self.clf.bias,
            "threshold": self.threshold,
            "info": self.info,
        }
        path.write_text(json.dumps(doc))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "HogSvmBaseline":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != "idseg-hog-svm":
            raise ValueError(f"{path} is not a HOG/SVM model file")
        params = HogParams(**doc["params"])
        clf = LinearClassifier(np.asarray(doc["weights"], dtype=np.float64), float(doc["bias"]))
        if clf.weights.shape != (params.descriptor_length,):
            raise ValueError("weight length does not match HOG parameters")
        return cls(params, clf, float(doc.get("threshold", 0.0)), doc.get("info", {}))


def fit_hog_baseline(
    samples: list[Sample],
    params: HogParams | None = None,
    seed: int = 0,
    hard_negative_rounds: int = 1,
    c: float = 0.1,
) -> HogSvmBaseline:
    """Train on window crops, then retrain with the top false positives from full-image scans."""
    params = params or HogParams()
    X, y = training_windows(samples, params, seed)
    clf = train_svm(X, y, c=c, seed=seed)
    for r in range(hard_negative_rounds):
        hard = []
        for s in samples:
            gray = to_gray(s.image).astype(np.float32)
            bb = mask_bbox(s.mask)
            dets = nms(top_detections(scan(s.image, clf, params), 100, -1.0), 0.5)
            dets = [d for d in dets if bb is None or box_iou(d.box(), bb) < NEG_IOU]
            hard += [hog_descriptor(crop_window(gray, d.box(), params), params) for d in dets[:5]]
        log.info("hard-negative round %d: %d windows", r + 1, len(hard))
        if not hard:
            break
        X = np.concatenate([X, np.asarray(hard)])
        y = np.concatenate([y, np.zeros(len(hard), np.int64)])
        clf = train_svm(X, y, c=c, seed=seed)
    acc = float(np.mean(clf.predict(X) == y))
    return HogSvmBaseline(params, clf, info={"train_windows": int(len(y)), "train_accuracy": acc, "seed": seed})
