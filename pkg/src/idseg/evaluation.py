"""IoU metric, per-subset reports, histograms and the latency benchmark."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data.types import Sample

log = logging.getLogger(__name__)

HIST_BINS = 50
REPORT_COLUMNS = ("Method", "Train", "Test", "Imgs test", "mIoU", "Stdv", "75p")
ALL = "ALL"

Predictor = Callable[[np.ndarray], np.ndarray]


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a & b| / |a | b| over card pixels; two empty masks score 1.0."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def percentile(scores: Sequence[float], p: float) -> float:
    """Linear interpolation on sorted scores at index p/100 * (n - 1)."""
    if len(scores) == 0:
        raise ValueError("percentile of an empty list")
    if not 0 <= p <= 100:
        raise ValueError("p must be in [0, 100]")
    s = sorted(float(v) for v in scores)
    q = p / 100 * (len(s) - 1)
    lo = math.floor(q)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (q - lo) * (s[hi] - s[lo])


@dataclass(frozen=True)
class EvalRecord:
    source_id: str
    iou: float
    country_card: str
    capture_source: str

    def __post_init__(self):
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"iou {self.iou} outside [0, 1]")


@dataclass(frozen=True)
class SubsetRow:
    method: str
    train: str
    test: str
    n: int
    miou: float
    std: float
    p75: float

    def as_csv(self) -> dict:
        return dict(zip(REPORT_COLUMNS, (self.method, self.train, self.test, self.n, self.miou, self.std, self.p75)))


def aggregate(scores: Sequence[float]) -> tuple[float, float, float]:
    """(mean, population std, p75)."""
    x = np.asarray(scores, dtype=np.float64)
    return float(x.mean()), float(x.std()), percentile(x, 75)


def histogram(scores: Sequence[float], bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    return np.histogram(np.asarray(scores, dtype=np.float64), bins=bins, range=(0.0, 1.0))


@dataclass
class EvalReport:
    method: str
    train_set: str
    records: list[EvalRecord]
    rows: list[SubsetRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def subset(self, name: str) -> list[EvalRecord]:
        if name == ALL:
            return list(self.records)
        return [r for r in self.records if r.country_card == name]

    def histogram(self, name: str = ALL) -> tuple[np.ndarray, np.ndarray]:
        return histogram([r.iou for r in self.subset(name)])

    def row(self, name: str = ALL) -> SubsetRow:
        for r in self.rows:
            if r.test == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "train_set": self.train_set,
            "rows": [asdict(r) for r in self.rows],
            "histograms": {
                r.test: {"counts": self.histogram(r.test)[0].tolist(), "bins": HIST_BINS} for r in self.rows
            },
            "warnings": list(self.warnings),
            "records": [asdict(r) for r in self.records],
        }


def build_report(
    records: list[EvalRecord], method: str, train_set: str, subsets: Sequence[str] | None = None
) -> EvalReport:
    """One row per country card present (or per requested subset) plus ALL."""
    report = EvalReport(method, train_set, list(records))
    if subsets is None:
        subsets = sorted({r.country_card for r in records}) + [ALL]
    for name in subsets:
        scores = [r.iou for r in report.subset(name)]
        if not scores:
            msg = f"subset {name} has no records; row omitted"
            log.warning(msg)
            report.warnings.append(msg)
            continue
        m, s, p = aggregate(scores)
        report.rows.append(SubsetRow(method, train_set, name, len(scores), m, s, p))
    return report


def evaluate(
    predictor: Predictor | object,
    samples: Sequence[Sample],
    method: str = "model",
    train_set: str = "synthetic",
    subsets: Sequence[str] | None = None,
) -> EvalReport:
    """Predict every sample at native resolution and aggregate IoU.

    `predictor` is a callable image -> mask, a SegModel, or anything with
    a ``predict_mask(image)`` method.
    """
    fn = as_predictor(predictor)
    records = []
    for s in samples:
        try:
            pred = fn(s.image)
        except Exception as e:
            raise RuntimeError(f"prediction failed for {s.source_id}: {e}") from e
        if pred.shape != s.mask.shape:
            raise RuntimeError(f"prediction for {s.source_id} has shape {pred.shape}, expected {s.mask.shape}")
        records.append(EvalRecord(s.source_id, iou(pred, s.mask), s.meta.country_card.value, s.meta.capture_source.value))
    return build_report(records, method, train_set, subsets)


def as_predictor(obj) -> Predictor:
    from .models.base import SegModel, predict_mask

    if isinstance(obj, SegModel):
        obj.eval()
        return lambda img: predict_mask(obj, img)
    if hasattr(obj, "predict_mask"):
        return obj.predict_mask
    if callable(obj):
        return obj
    raise TypeError(f"cannot predict with {type(obj).__name__}")


# --------------------------------------------------------------------------
# timing


@dataclass
class TimingStats:
    model_id: str
    input_size: int | None
    n_images: int
    mean_seconds: float
    std_seconds: float
    per_image_seconds: list[float]

    def __post_init__(self):
        if self.n_images != len(self.per_image_seconds):
            raise ValueError("n_images does not match the per-image list")

    def to_dict(self) -> dict:
        return asdict(self)


def benchmark_inference(
    predictor,
    images: Sequence[np.ndarray],
    n: int = 100,
    warmup: int = 10,
    seed: int = 0,
    model_id: str = "model",
    input_size: int | None = None,
) -> TimingStats:
    """Wall-clock single-image predictions (resize + forward + argmax), single-threaded."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not images:
        raise ValueError("no images to benchmark")
    fn = as_predictor(predictor)
    if input_size is None:
        spec = getattr(predictor, "spec", None)
        input_size = getattr(spec, "input_size", None)
    rng = np.random.default_rng(seed)
    replace = len(images) < n
    order = rng.choice(len(images), size=n, replace=replace)
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        for i in range(warmup):
            fn(images[int(order[i % n])])
        times = []
        for i in order:
            t0 = time.perf_counter()
            fn(images[int(i)])
            times.append(time.perf_counter() - t0)
    finally:
        torch.set_num_threads(threads)
    t = np.asarray(times)
    return TimingStats(model_id, input_size, n, float(t.mean()), float(t.std()), times)


# --------------------------------------------------------------------------
# rendering


def render_report(report: EvalReport, out_dir: str | Path, timing: TimingStats | None = None) -> list[Path]:
    """CSV table, JSON summary and one histogram PNG per row."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in report.rows:
            w.writerow(r.as_csv())
    written.append(csv_path)

    summary = report.to_dict()
    if timing is not None:
        summary["timing"] = timing.to_dict()
    json_path = out / "report.json"
    json_path.write_text(json.dumps(summary, indent=2))
    written.append(json_path)

    for r in report.rows:
        counts, edges = report.histogram(r.test)
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="black", linewidth=0.3)
        ax.set_xlim(0, 1)
        ax.set_xlabel("IoU")
        ax.set_ylabel("images")
        ax.set_title(f"{r.method} / {r.test} (n={r.n}, mIoU={r.miou:.4f})", fontsize=9)
        fig.tight_layout()
        p = out / f"hist_{_slug(r.test)}.png"
        fig.savefig(p, dpi=100)
        plt.close(fig)
        written.append(p)
    return written


def read_report_csv(path: str | Path) -> list[SubsetRow]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        return [
            SubsetRow(d["Method"], d["Train"], d["Test"], int(d["Imgs test"]), float(d["mIoU"]), float(d["Stdv"]), float(d["75p"]))
            for d in reader
        ]


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name)
