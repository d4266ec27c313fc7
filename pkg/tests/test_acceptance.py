"""Acceptance criteria, one test each.

Every test attaches a one-line measurement; the terminal summary prints
PASS/FAIL per criterion. The desk-scale models are trained once per session
and shared by the end-to-end, ordering and timing checks.
"""

import dataclasses
import math
import time
import warnings

import numpy as np
import pytest
import torch

from idseg import augment as aug
from idseg.augment import OP_NAMES, OP_TABLE, AugOpSpec, OpKind, apply_op
from idseg.data.raster import EmptyMaskWarning, rasterize_polygon
from idseg.data.synth import default_generator_config, generate_synthetic_sample
from idseg.data.types import PolygonAnnotation, Sample, SampleMeta, Split
from idseg.evaluation import (
    REPORT_COLUMNS,
    EvalRecord,
    benchmark_inference,
    build_report,
    evaluate,
    iou,
    read_report_csv,
    render_report,
)
from idseg.models import Arch, ModelSpec, build_model, count_parameters, predict_mask
from idseg.models.densenet10 import REFERENCE_PARAMS
from idseg.models.hog_svm import fit_hog_baseline
from idseg.train import TinyConvNet, TrainConfig, gradient_check, train

from test_augment import _elastic_oracle, _forward_oracle
from test_raster import brute_force_mask

DESK_W, DESK_H = 640, 360
DESK_TRAIN, DESK_VAL, DESK_TEST = 200, 40, 40


def _detail(record_property, text):
    record_property("detail", text)
    print(text)


# --------------------------------------------------------------------------
# oracles


def _pixel_count_iou(a, b):
    inter = union = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += x & y
        union += x | y
    return 1.0 if union == 0 else inter / union


@pytest.mark.criterion("IoU oracle equivalence")
def test_iou_oracle_equivalence(record_property):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        h, w = rng.integers(1, 65, 2)
        fill_a, fill_b = rng.random(2)
        a = (rng.random((h, w)) < fill_a).astype(np.uint8)
        b = (rng.random((h, w)) < fill_b).astype(np.uint8)
        worst = max(worst, abs(iou(a, b) - _pixel_count_iou(a, b)))
    dt = time.perf_counter() - t0
    _detail(record_property, f"max |diff| {worst:.1e} over 1000 pairs, {dt:.1f} s")
    assert worst <= 1e-12
    assert dt < 10


@pytest.mark.criterion("Rasterization oracle")
def test_rasterization_oracle(record_property):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    mismatched = 0
    for _ in range(100):
        w, h = (int(v) for v in rng.integers(1, 33, 2))
        n = int(rng.integers(3, 10))
        pts = [(float(x), float(y)) for x, y in zip(rng.uniform(-4, w + 4, n), rng.uniform(-4, h + 4, n))]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyMaskWarning)
            m = rasterize_polygon(PolygonAnnotation(pts), w, h)
        mismatched += int((m != brute_force_mask(pts, w, h)).any())
    dt = time.perf_counter() - t0
    _detail(record_property, f"{mismatched} of 100 polygons differ, {dt:.1f} s")
    assert mismatched == 0
    assert dt < 30


@pytest.mark.criterion("Augmentation consistency suite")
def test_augmentation_consistency(record_property, small_samples):
    t0 = time.perf_counter()
    failures = []
    base = small_samples[0]
    for name in OP_NAMES:
        op = AugOpSpec(name)
        for seed in range(50):
            drawn = aug.sample_params(op, np.random.default_rng(seed))
            for k, v in op.params.items():
                if isinstance(v, tuple) and not v[0] <= drawn[k] <= v[1]:
                    failures.append(f"{name} seed {seed}: {k}={drawn[k]} outside {v}")
            out = apply_op(op, base, seed)
            if op.kind is not OpKind.GEOMETRIC:
                if not np.array_equal(out.mask, base.mask):
                    failures.append(f"{name} seed {seed}: mask changed")
                continue
            small = base.mask[::8, ::8]
            s = Sample(np.repeat(small[..., None] * 255, 3, axis=2), small, SampleMeta("mirror"))
            moved = apply_op(op, s, seed)
            if name == "Elastic-Transformation":
                ok = np.array_equal(moved.mask, _elastic_oracle(small, seed))
            else:
                k = drawn.get("k")
                ok = np.array_equal(moved.mask, _forward_oracle(name, small, k))
                # the image channel carries the mask, so it must move identically
                ok &= np.array_equal(moved.image[..., 0] > 127, moved.mask.astype(bool))
            if not ok:
                failures.append(f"{name} seed {seed}: image/mask transforms disagree")
    dt = time.perf_counter() - t0
    _detail(record_property, f"{len(OP_NAMES)} ops x 50 seeds, {len(failures)} failures, {dt:.1f} s")
    assert len(OP_NAMES) == len(OP_TABLE) == 15
    assert not failures, failures[:5]
    assert dt < 120


@pytest.mark.criterion("Parameter-count checks")
def test_parameter_counts(record_property):
    dn = count_parameters(build_model(ModelSpec(Arch.DENSENET10, 224, growth_rate=5, pretrained_encoder=False)))
    mu = count_parameters(build_model(ModelSpec(Arch.MOBILEUNET, 224, pretrained_encoder=False)))
    _detail(record_property, f"DenseNet10 {dn:,} ({dn / REFERENCE_PARAMS - 1:+.2%}), MobileUNet {mu:,}, ratio {mu / dn:.1f}")
    assert abs(dn - 210_732) <= 0.05 * 210_732
    assert 6_000_000 <= mu <= 7_000_000
    assert dn < mu / 20


@pytest.mark.criterion("Gradient check")
def test_gradient_check(record_property):
    torch.manual_seed(0)
    net = TinyConvNet(hidden=8, input_size=32)
    n = count_parameters(net)
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    mask = np.zeros((32, 32), np.uint8)
    mask[8:24, 6:26] = 1
    err = gradient_check(net, Sample(img, mask, SampleMeta("g")), n_params=20, step=1e-3)
    _detail(record_property, f"max relative error {err:.2e} on {n} params")
    assert n <= 5000
    assert err < 1e-2


# --------------------------------------------------------------------------
# training runs


@pytest.mark.slow
@pytest.mark.criterion("Overfit-one-sample")
def test_overfit_one_sample(record_property):
    cfg = default_generator_config(0, DESK_W, DESK_H)
    sample = generate_synthetic_sample(cfg, 7)
    tc = TrainConfig(epochs=50, batch_size=1, augment=None, pretrained_encoder=False, seed=0)
    torch.manual_seed(0)
    model = build_model(tc.model_spec())
    t0 = time.perf_counter()
    model, hist = train(model, [sample], [sample], tc)
    dt = time.perf_counter() - t0
    score = iou(predict_mask(model, sample.image), sample.mask)
    _detail(record_property, f"IoU {score:.4f} (train-mode batch IoU {hist.last.train_miou:.4f}), {dt:.0f} s")
    assert score >= 0.95
    assert dt < 600


def _desk_split(split, first_seed, n):
    cfg = dataclasses.replace(default_generator_config(0, DESK_W, DESK_H), split=split)
    return [generate_synthetic_sample(cfg, first_seed + i) for i in range(n)]


@pytest.fixture(scope="session")
def desk_data():
    return {
        "train": _desk_split(Split.TRAIN, 0, DESK_TRAIN),
        "val": _desk_split(Split.VAL, 1000, DESK_VAL),
        "test": _desk_split(Split.TEST, 2000, DESK_TEST),
    }


def _desk_run(arch, data):
    tc = TrainConfig(epochs=30, arch=arch, pretrained_encoder=False, seed=0)
    torch.manual_seed(0)
    model = build_model(tc.model_spec())
    t0 = time.perf_counter()
    model, hist = train(model, data["train"], data["val"], tc)
    seconds = time.perf_counter() - t0
    report = evaluate(model, data["test"], f"{arch.value} 224")
    return {"model": model, "history": hist, "seconds": seconds, "test_miou": report.row().miou}


@pytest.fixture(scope="session")
def desk_mobileunet(desk_data):
    return _desk_run(Arch.MOBILEUNET, desk_data)


@pytest.fixture(scope="session")
def desk_densenet(desk_data):
    return _desk_run(Arch.DENSENET10, desk_data)


@pytest.mark.slow
@pytest.mark.criterion("Desk-scale end-to-end (MobileUNet)")
def test_desk_scale_mobileunet(record_property, desk_mobileunet):
    r = desk_mobileunet
    h = r["history"]
    _detail(
        record_property,
        f"test mIoU {r['test_miou']:.4f}, best val {h.best.val_miou:.4f} at epoch {h.best.epoch + 1}, "
        f"{r['seconds'] / 60:.1f} min",
    )
    assert r["test_miou"] >= 0.90
    assert r["seconds"] <= 3600


@pytest.mark.slow
@pytest.mark.criterion("Desk-scale end-to-end (DenseNet10)")
def test_desk_scale_densenet10(record_property, desk_densenet):
    r = desk_densenet
    h = r["history"]
    _detail(
        record_property,
        f"test mIoU {r['test_miou']:.4f}, best val {h.best.val_miou:.4f} at epoch {h.best.epoch + 1}, "
        f"{r['seconds'] / 60:.1f} min",
    )
    assert r["test_miou"] >= 0.85
    assert r["seconds"] <= 3600


@pytest.mark.slow
@pytest.mark.criterion("Baseline ordering property")
def test_hog_trails_mobileunet(record_property, desk_data, desk_mobileunet):
    baseline = fit_hog_baseline(desk_data["train"], seed=0)
    hog = evaluate(baseline, desk_data["test"], "HOG/SVM").row().miou
    mob = desk_mobileunet["test_miou"]
    _detail(record_property, f"HOG/SVM {hog:.4f} vs MobileUNet {mob:.4f}, gap {mob - hog:.4f}")
    assert mob - hog >= 0.05


@pytest.mark.slow
@pytest.mark.criterion("Timing harness self-consistency")
def test_timing_self_consistency(record_property, desk_data, desk_mobileunet):
    model = desk_mobileunet["model"]
    images = [s.image for s in desk_data["test"]]
    runs = [benchmark_inference(model, images, n=100, warmup=10, seed=0) for _ in range(2)]
    mean_gap = max(abs(r.mean_seconds - math.fsum(r.per_image_seconds) / r.n_images) for r in runs)
    s1, s2 = runs[0].std_seconds, runs[1].std_seconds
    rel = abs(s2 - s1) / s1
    _detail(
        record_property,
        f"mean {runs[0].mean_seconds * 1e3:.1f}/{runs[1].mean_seconds * 1e3:.1f} ms, "
        f"std {s1 * 1e3:.2f}/{s2 * 1e3:.2f} ms ({rel:.0%} apart), mean recompute gap {mean_gap:.1e}",
    )
    assert all(r.n_images == 100 for r in runs)
    assert mean_gap <= 1e-9
    assert rel <= 0.20


# --------------------------------------------------------------------------
# report format


@pytest.mark.criterion("Report format")
def test_report_format(record_property, tmp_path):
    recs = [EvalRecord("a", 0.5, "CHL1", "Digital"), EvalRecord("b", 1.0, "CHL1", "Digital")]
    report = build_report(recs, "MobileUNet 224", "synthetic", subsets=["CHL1", "ALL"])
    render_report(report, tmp_path)
    header = (tmp_path / "report.csv").read_text().splitlines()[0].split(",")
    row = read_report_csv(tmp_path / "report.csv")[-1]
    _detail(record_property, f"columns {header}; aggregate ({row.miou}, {row.std}, {row.p75})")
    assert tuple(header) == REPORT_COLUMNS == ("Method", "Train", "Test", "Imgs test", "mIoU", "Stdv", "75p")
    assert (row.miou, row.std, row.p75) == pytest.approx((0.75, 0.25, 0.875), abs=1e-12)
