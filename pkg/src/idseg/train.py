"""Training loop: Adam, pixel-wise cross-entropy, best-validation-epoch weights."""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import torch
import yaml
from torch import nn

from . import augment as aug
from .data.types import Sample
from .evaluation import iou
from .models.base import Arch, ModelSpec, SegModel, predict_mask, to_input_tensor
from .preprocess import apply_flags

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7
PREPROCESS_FLAGS = ("background_permuter", "gray_mask", "hsv_jitter")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 300
    batch_size: int = 10
    input_size: int = 224
    augment: aug.AugPipeline | None = field(default_factory=aug.default_pipeline)
    # probability that a training sample goes through the augmentation pipeline
    augment_prob: float = 1.0
    preprocess_flags: dict[str, bool] = field(default_factory=lambda: {k: False for k in PREPROCESS_FLAGS})
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-7
    class_weights: tuple[float, float] | None = None
    workers: int = 1
    # model settings, used when the trainer builds the network itself
    arch: Arch = Arch.MOBILEUNET
    growth_rate: int = 5
    pretrained_encoder: bool = True
    freeze_encoder: bool = False

    def __post_init__(self):
        self.arch = Arch(self.arch)
        self.adam_betas = tuple(self.adam_betas)
        if self.class_weights is not None:
            self.class_weights = tuple(float(w) for w in self.class_weights)
        unknown = set(self.preprocess_flags) - set(PREPROCESS_FLAGS)
        if unknown:
            raise ValueError(f"unknown preprocess flags {sorted(unknown)}")
        self.preprocess_flags = {k: bool(self.preprocess_flags.get(k, False)) for k in PREPROCESS_FLAGS}
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.augment_prob <= 1:
            raise ValueError("augment_prob must be in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            self.arch,
            self.input_size,
            growth_rate=self.growth_rate,
            pretrained_encoder=self.pretrained_encoder,
            freeze_encoder=self.freeze_encoder,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = self.arch.value
        d["augment"] = self.augment.to_dict() if self.augment is not None else None
        d["adam_betas"] = list(self.adam_betas)
        d["class_weights"] = list(self.class_weights) if self.class_weights else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys {sorted(unknown)}")
        if "augment" in d:
            a = d["augment"]
            if a is None or a is False:
                d["augment"] = None
            elif a == "default" or a is True:
                d["augment"] = aug.default_pipeline()
            else:
                d["augment"] = aug.AugPipeline.from_dict(a)
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_miou: float
    val_loss: float
    val_miou: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1  # index into records

    @property
    def best(self) -> EpochRecord:
        return self.records[self.best_epoch]

    @property
    def last(self) -> EpochRecord:
        return self.records[-1]

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, path: str | Path) -> Path:
        cols = [f.name for f in fields(EpochRecord)] + ["best"]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for i, r in enumerate(self.records):
                w.writerow([*(repr(v) if isinstance(v, float) else v for v in astuple_(r)), int(i == self.best_epoch)])
        return Path(path)

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainHistory":
        h = cls()
        with open(path, newline="") as f:
            for i, d in enumerate(csv.DictReader(f)):
                h.records.append(
                    EpochRecord(int(d["epoch"]), *(float(d[k]) for k in ("train_loss", "train_miou", "val_loss", "val_miou", "seconds")))
                )
                if d["best"] == "1":
                    h.best_epoch = i
        return h


def astuple_(r: EpochRecord) -> tuple:
    return tuple(getattr(r, f.name) for f in fields(r))


# --------------------------------------------------------------------------
# loss


def pixel_crossentropy(probs, target, class_weights: Sequence[float] | None = None, floor: float = PROB_FLOOR):
    """Mean over pixels of -log p(target), with p floored at `floor`.

    Torch input: probs N x C x H x W, target N x H x W (returns a tensor).
    NumPy input: probs H x W x C, target H x W (returns a float).
    """
    if isinstance(probs, np.ndarray):
        p = torch.from_numpy(np.ascontiguousarray(np.moveaxis(probs, -1, 0)[None]).astype(np.float64))
        t = torch.from_numpy(np.asarray(target)[None].astype(np.int64))
        return float(pixel_crossentropy(p, t, class_weights, floor))
    if probs.dim() != 4 or target.dim() != 3 or probs.shape[0] != target.shape[0] or probs.shape[2:] != target.shape[1:]:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)}, target {tuple(target.shape)}")
    t = target.long()
    if int(t.max()) >= probs.shape[1] or int(t.min()) < 0:
        raise ValueError("target labels must be in [0, C)")
    nll = -torch.log(probs.clamp_min(floor)).gather(1, t[:, None])[:, 0]
    if class_weights is None:
        return nll.mean()
    w = torch.as_tensor(class_weights, dtype=probs.dtype, device=probs.device)[t]
    return (nll * w).sum() / w.sum()


# --------------------------------------------------------------------------
# data


def sample_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1, np.uint64)[0] >> 1)


def prepare_sample(sample: Sample, cfg: TrainConfig, seed: int, backgrounds: list[np.ndarray] | None) -> tuple[np.ndarray, np.ndarray]:
    """Preprocess flags, then augmentation, then resize to the network input."""
    rng = np.random.default_rng(seed)
    flags = cfg.preprocess_flags
    sample = apply_flags(
        sample,
        rng,
        background_permuter=flags["background_permuter"],
        gray=flags["gray_mask"],
        hsv=flags["hsv_jitter"],
        backgrounds=backgrounds,
    )
    if cfg.augment is not None and rng.random() < cfg.augment_prob:
        sample = aug.apply(cfg.augment, sample, int(rng.integers(2**62)))
    s = cfg.input_size
    img = cv2.resize(sample.image, (s, s), interpolation=cv2.INTER_LINEAR)
    mask = cv2.resize(sample.mask, (s, s), interpolation=cv2.INTER_NEAREST)
    return img, mask


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _batch_iou(probs: torch.Tensor, target: torch.Tensor) -> list[float]:
    pred = (probs[:, 1] > probs[:, 0]).numpy()
    return [iou(p, t) for p, t in zip(pred, target.numpy())]


# --------------------------------------------------------------------------
# loop


@torch.no_grad()
def validate(model: SegModel, samples: Sequence[Sample], cfg: TrainConfig) -> tuple[float, float]:
    """(loss at network resolution, mIoU at native resolution)."""
    model.eval()
    losses, ious = [], []
    s = cfg.input_size
    for smp in samples:
        x = to_input_tensor(smp.image, s)
        probs = model(x)
        t = torch.from_numpy(cv2.resize(smp.mask, (s, s), interpolation=cv2.INTER_NEAREST)[None].astype(np.int64))
        losses.append(float(pixel_crossentropy(probs, t, cfg.class_weights)))
        ious.append(iou(predict_mask(model, smp.image), smp.mask))
    return float(np.mean(losses)), float(np.mean(ious))


def train(
    model: SegModel,
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    cfg: TrainConfig,
    backgrounds: list[np.ndarray] | None = None,
    on_epoch=None,
) -> tuple[SegModel, TrainHistory]:
    """Returns the model holding its best-validation weights and the full history."""
    if not train_samples:
        raise ValueError("train split is empty")
    if not val_samples:
        raise ValueError("val split is empty")
    if model.spec.input_size != cfg.input_size:
        raise ValueError(f"model input {model.spec.input_size} != config input {cfg.input_size}")
    torch.manual_seed(cfg.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.adam_betas, eps=cfg.adam_eps)
    history = TrainHistory()
    best_state = None
    best_miou = -math.inf
    if cfg.preprocess_flags["background_permuter"] and not backgrounds:
        log.warning("background_permuter enabled without backgrounds; it will not fire")

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            model.train()
            rng = np.random.default_rng([cfg.seed, epoch])
            losses, ious = [], []
            for b, idx in enumerate(_batches(len(train_samples), cfg.batch_size, rng)):
                jobs = [(train_samples[i], cfg, sample_seed(cfg.seed, epoch, int(i)), backgrounds) for i in idx]
                prepared = list(pool.map(lambda a: prepare_sample(*a), jobs)) if pool else [prepare_sample(*a) for a in jobs]
                x = to_input_tensor(np.stack([p[0] for p in prepared]), cfg.input_size)
                t = torch.from_numpy(np.stack([p[1] for p in prepared]).astype(np.int64))
                probs = model(x)
                loss = pixel_crossentropy(probs, t, cfg.class_weights)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss {loss.item()} at epoch {epoch}, batch {b}; "
                        f"learning rate {cfg.learning_rate:g} may be too high for this data"
                    )
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                losses.append(loss.item() * len(idx))
                ious += _batch_iou(probs.detach(), t)
            train_loss = sum(losses) / len(train_samples)
            val_loss, val_miou = validate(model, val_samples, cfg)
            rec = EpochRecord(epoch, train_loss, float(np.mean(ious)), val_loss, val_miou, time.perf_counter() - t0)
            history.records.append(rec)
            if val_miou > best_miou:
                best_miou = val_miou
                history.best_epoch = len(history.records) - 1
                best_state = copy.deepcopy(model.state_dict())
            log.info(
                "epoch %d/%d train_loss %.4f train_mIoU %.4f val_loss %.4f val_mIoU %.4f (%.1fs)",
                epoch + 1, cfg.epochs, rec.train_loss, rec.train_miou, rec.val_loss, rec.val_miou, rec.seconds,
            )
            if on_epoch is not None:
                on_epoch(model, rec)
    finally:
        if pool:
            pool.shutdown()
    model.load_state_dict(best_state)
    model.eval()
    return model, history


# --------------------------------------------------------------------------
# numerical gradient check


class TinyConvNet(SegModel):
    """Two 3x3 convolutions with a tanh between; for finite-difference checks."""

    def __init__(self, hidden: int = 4, input_size: int = 32, num_classes: int = 2):
        super().__init__()
        self.spec = ModelSpec(Arch.DENSENET10, input_size, num_classes, pretrained_encoder=False)
        self.conv1 = nn.Conv2d(3, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, num_classes, 3, padding=1)

    def logits(self, x):
        return self.conv2(torch.tanh(self.conv1(x)))


def loss_gradients(model: SegModel, x: torch.Tensor, target: torch.Tensor) -> list[torch.Tensor]:
    model.zero_grad(set_to_none=True)
    loss = pixel_crossentropy(model(x), target)
    loss.backward()
    return [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in model.parameters()]


def gradient_check(model: SegModel, sample: Sample, n_params: int = 20, step: float = 1e-3, seed: int = 0) -> float:
    """Max relative error between backprop and central-difference gradients.

    Runs in float64 on a copy of the model.
    """
    model = copy.deepcopy(model).double().eval()
    n_total = sum(p.numel() for p in model.parameters())
    if n_total > 5000:
        raise ValueError(f"model has {n_total} parameters; gradient_check expects <= 5000")
    s = model.spec.input_size
    x = to_input_tensor(sample.image, s).double()
    target = torch.from_numpy(cv2.resize(sample.mask, (s, s), interpolation=cv2.INTER_NEAREST)[None].astype(np.int64))
    grads = loss_gradients(model, x, target)
    flat = [(pi, j) for pi, p in enumerate(model.parameters()) for j in range(p.numel())]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(flat), size=min(n_params, len(flat)), replace=False)
    plist = list(model.parameters())
    worst = 0.0
    with torch.no_grad():
        for k in picks:
            pi, j = flat[int(k)]
            w = plist[pi].view(-1)
            orig = float(w[j])
            w[j] = orig + step
            up = float(pixel_crossentropy(model(x), target))
            w[j] = orig - step
            down = float(pixel_crossentropy(model(x), target))
            w[j] = orig
            num = (up - down) / (2 * step)
            ana = float(grads[pi].view(-1)[j])
            denom = max(abs(num), abs(ana), 1e-8)
            worst = max(worst, abs(num - ana) / denom)
    return worst
