"""idseg command line: synth, ingest-via, preprocess, train, eval.

Every command validates its inputs, writes ``manifest.json`` into its output
directory, then produces its outputs. Exit status is 0 only when all outputs
were written.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__

log = logging.getLogger("idseg")

MANIFEST = "manifest.json"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class CliError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seeds: dict
    inputs: dict
    outputs: dict
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    environment: dict = field(
        default_factory=lambda: {"python": platform.python_version(), "platform": platform.platform()}
    )

    def write(self, out_dir: Path) -> Path:
        """Atomic: temp file in the same directory, then rename."""
        out_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest-", suffix=".json")
        with os.fdopen(fd, "w") as f:
            json.dump(dataclasses.asdict(self), f, indent=2, default=str)
        target = out_dir / MANIFEST
        os.replace(tmp, target)
        return target


def _load_yaml(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file {p} does not exist")
    try:
        doc = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as e:
        raise CliError(f"config {p} is not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise CliError(f"config {p} must be a mapping")
    return doc


def _list_images(d: Path) -> list[Path]:
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# --------------------------------------------------------------------------
# synth


SYNTH_KEYS = {
    "width", "height", "scale_range", "rotation_range", "perspective_jitter", "brightness_range",
    "occluder_prob", "capture_source_probs", "centered", "templates_per_card", "n_backgrounds",
    "template_dir", "background_dir", "split_ratios",
}


def _generator_config(doc: dict, seed: int):
    from .data.io import read_image
    from .data.synth import CardTemplate, default_generator_config
    from .data.types import CaptureSource, CountryCard

    unknown = set(doc) - SYNTH_KEYS
    if unknown:
        raise CliError(f"unknown generator config keys {sorted(unknown)}")
    kw = {k: doc[k] for k in ("scale_range", "rotation_range", "perspective_jitter", "brightness_range", "occluder_prob", "centered") if k in doc}
    for k in ("scale_range", "rotation_range", "brightness_range"):
        if k in kw:
            kw[k] = tuple(float(v) for v in kw[k])
    if "capture_source_probs" in doc:
        kw["capture_source_probs"] = {CaptureSource(k): float(v) for k, v in doc["capture_source_probs"].items()}
    cfg = default_generator_config(
        seed,
        int(doc.get("width", 1280)),
        int(doc.get("height", 720)),
        int(doc.get("templates_per_card", 4)),
        int(doc.get("n_backgrounds", 24)),
        **kw,
    )
    if "template_dir" in doc:
        import cv2

        tpls = []
        for p in sorted(Path(doc["template_dir"]).glob("*.png")):
            rgba = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
            if rgba is None or rgba.ndim != 3 or rgba.shape[2] != 4:
                raise CliError(f"template {p} must be an RGBA png")
            cc = CountryCard(p.stem.split("_")[0])
            tpls.append(CardTemplate(cc, cv2.cvtColor(rgba, cv2.COLOR_BGRA2RGBA)))
        cfg.templates = tpls
    if "background_dir" in doc:
        cfg.backgrounds = [read_image(p) for p in _list_images(Path(doc["background_dir"]))]
    try:
        cfg.validate()
    except ValueError as e:
        raise CliError(f"invalid generator config: {e}") from e
    return cfg


def cmd_synth(args) -> None:
    from .data.io import write_meta, write_sample
    from .data.split import split_dataset
    from .data.synth import generate_synthetic_sample

    if args.count < 1:
        raise CliError("count must be ≥ 1")
    doc = _load_yaml(args.config)
    cfg = _generator_config(doc, args.seed)
    ratios = tuple(doc.get("split_ratios", (0.7, 0.1, 0.2)))
    out = Path(args.out)
    seeds = [int(s) for s in np.random.SeedSequence(args.seed).generate_state(args.count, np.uint32)]
    RunManifest(
        "synth", args.argv, {**doc, "split_ratios": list(ratios), "count": args.count},
        {"seed": args.seed, "sample_seeds": seeds}, {"config": args.config}, {"dataset": str(out)},
    ).write(out)

    samples = []
    for i, s in enumerate(seeds):
        smp = generate_synthetic_sample(cfg, s)
        samples.append(smp.replace(meta=dataclasses.replace(smp.meta, source_id=f"synth_{i:06d}")))
    metas = [s.meta for s in samples]
    if args.split != "auto":
        splits = {m.source_id: args.split for m in metas}
    elif len(metas) >= 3:
        splits = split_dataset(metas, ratios, args.seed, stratify=False).assignment
    else:
        splits = {m.source_id: "train" for m in metas}
    rows = [write_sample(out, s.replace(meta=s.meta.with_split(splits[s.source_id]))) for s in samples]
    write_meta(out, rows)
    print(f"wrote {len(rows)} samples to {out}")


# --------------------------------------------------------------------------
# ingest-via


def cmd_ingest_via(args) -> None:
    from .data.io import read_image, write_meta, write_sample
    from .data.raster import rasterize_all
    from .data.split import split_dataset
    from .data.types import Sample, SampleMeta
    from .data.via import ViaParseError, load_via_project

    try:
        project = load_via_project(args.project)
    except (OSError, ViaParseError) as e:
        raise CliError(str(e)) from e
    if not project.annotations:
        raise CliError(f"{args.project} has no polygon annotations")
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        raise CliError(f"images directory {images_dir} does not exist")
    by_image: dict[str, list] = {}
    for image_id, poly in project.annotations:
        by_image.setdefault(image_id, []).append(poly)
    matched, skipped = [], []
    for image_id in by_image:
        fname = project.file_attributes.get(image_id, {}).get("filename", image_id)
        p = images_dir / fname
        (matched if p.exists() else skipped).append((image_id, p))
    for image_id, p in skipped:
        log.warning("skipping %s: image %s not found", image_id, p)
    if not matched:
        raise CliError("no annotated image was found in the images directory")

    out = Path(args.out)
    RunManifest(
        "ingest-via", args.argv,
        {"country_card": args.country_card, "capture_source": args.capture_source, "split": args.split},
        {"seed": args.seed}, {"project": args.project, "images": args.images},
        {"dataset": str(out), "matched": len(matched), "skipped": [i for i, _ in skipped]},
    ).write(out)

    samples = []
    for image_id, p in matched:
        img = read_image(p)
        h, w = img.shape[:2]
        attrs = project.file_attributes.get(image_id, {})
        meta = SampleMeta(
            Path(image_id).stem,
            attrs.get("country_card", args.country_card),
            attrs.get("capture_source", args.capture_source),
        )
        samples.append(Sample(img, rasterize_all(by_image[image_id], w, h), meta))
    if args.split == "auto" and len(samples) >= 3:
        splits = split_dataset([s.meta for s in samples], seed=args.seed, stratify=False).assignment
    else:
        fixed = "train" if args.split == "auto" else args.split
        splits = {s.source_id: fixed for s in samples}
    rows = [write_sample(out, s.replace(meta=s.meta.with_split(splits[s.source_id]))) for s in samples]
    write_meta(out, rows)
    print(f"wrote {len(rows)} masks to {out}; skipped {len(skipped)}")


# --------------------------------------------------------------------------
# preprocess


def cmd_preprocess(args) -> None:
    from .data.io import read_dataset, read_image, write_meta, write_sample
    from .data.synth import render_background
    from .preprocess import gray_mask, hsv_jitter, permute_background

    src = Path(args.dataset)
    try:
        samples = read_dataset(src)
    except (OSError, ValueError) as e:
        raise CliError(f"cannot read dataset {src}: {e}") from e
    backgrounds = None
    if args.method == "background_permuter":
        if args.backgrounds:
            backgrounds = [read_image(p) for p in _list_images(Path(args.backgrounds))]
            if not backgrounds:
                raise CliError(f"no images in {args.backgrounds}")
        else:
            rng = np.random.default_rng(args.seed)
            backgrounds = [render_background(rng, 1280, 720) for _ in range(16)]
    out = Path(args.out)
    RunManifest(
        "preprocess", args.argv, {"method": args.method}, {"seed": args.seed},
        {"dataset": str(src), "backgrounds": args.backgrounds}, {"dataset": str(out)},
    ).write(out)
    seeds = np.random.SeedSequence(args.seed).generate_state(len(samples), np.uint32)
    rows = []
    for s, seed in zip(samples, seeds):
        rng = np.random.default_rng(int(seed))
        if args.method == "background_permuter":
            s = permute_background(s, backgrounds[int(rng.integers(len(backgrounds)))])
        elif args.method == "gray_mask":
            s = gray_mask(s)
        else:
            s = hsv_jitter(s, int(seed))
        rows.append(write_sample(out, s))
    write_meta(out, rows)
    print(f"wrote {len(rows)} samples to {out}")


# --------------------------------------------------------------------------
# train


def _require_splits(root: Path, *names: str) -> None:
    from .data.io import available_splits

    try:
        have = {s.value for s in available_splits(root)}
    except (OSError, ValueError) as e:
        raise CliError(f"cannot read dataset {root}: {e}") from e
    for n in names:
        if n not in have:
            raise CliError(f"dataset {root} has no '{n}' split")


def cmd_train(args) -> None:
    import torch

    from .data.io import read_dataset
    from .models.base import Arch, build_model, save_checkpoint
    from .models.mobileunet import PretrainedUnavailableError
    from .train import TrainConfig, TrainingDivergedError, train

    root = Path(args.dataset)
    _require_splits(root, "train", "val")
    out = Path(args.out)
    doc = _load_yaml(args.config)
    if args.arch == "hog-svm":
        return _train_hog(args, root, out, doc)

    overrides = {
        "arch": {"mobileunet": Arch.MOBILEUNET, "densenet10": Arch.DENSENET10}.get(args.arch),
        "growth_rate": args.k,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "input_size": args.input_size,
        "learning_rate": args.lr,
        "seed": args.seed,
        "workers": args.workers,
        "pretrained_encoder": False if args.no_pretrained else None,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = TrainConfig.from_dict(doc)
        spec = cfg.model_spec()
    except (TypeError, ValueError) as e:
        raise CliError(f"invalid train config: {e}") from e

    torch.manual_seed(cfg.seed)
    try:
        model = build_model(spec, encoder_weights=args.encoder_weights)
    except PretrainedUnavailableError as e:
        raise CliError(str(e)) from e
    print(f"{spec.arch.value}: {model.parameter_count:,} trainable parameters")

    RunManifest(
        "train", args.argv, cfg.to_dict(), {"seed": cfg.seed}, {"dataset": str(root), "config": args.config},
        {"checkpoint": str(out / "checkpoint"), "history": str(out / "history.csv")},
    ).write(out)
    train_s, val_s = read_dataset(root, "train"), read_dataset(root, "val")
    try:
        model, hist = train(model, train_s, val_s, cfg)
    except TrainingDivergedError as e:
        raise CliError(str(e)) from e
    save_checkpoint(
        model, out / "checkpoint",
        {"best_epoch": hist.best.epoch, "best_val_miou": hist.best.val_miou, "last_val_miou": hist.last.val_miou},
    )
    hist.to_csv(out / "history.csv")
    print(f"best epoch {hist.best.epoch + 1}: val mIoU {hist.best.val_miou:.4f} (last {hist.last.val_miou:.4f})")


def _train_hog(args, root: Path, out: Path, doc: dict) -> None:
    from .data.io import read_dataset
    from .evaluation import evaluate
    from .models.hog_svm import HogParams, fit_hog_baseline

    try:
        params = HogParams(**doc.get("hog", {}))
    except (TypeError, ValueError) as e:
        raise CliError(f"invalid HOG parameters: {e}") from e
    RunManifest(
        "train", args.argv, {"arch": "hog-svm", "hog": dataclasses.asdict(params)}, {"seed": args.seed},
        {"dataset": str(root), "config": args.config}, {"model": str(out / "hog_svm.json")},
    ).write(out)
    baseline = fit_hog_baseline(read_dataset(root, "train"), params, seed=args.seed)
    val = evaluate(baseline, read_dataset(root, "val"), "HOG/SVM")
    baseline.info["val_miou"] = val.row().miou
    baseline.save(out / "hog_svm.json")
    print(f"HOG/SVM: val mIoU {val.row().miou:.4f}")


# --------------------------------------------------------------------------
# eval


def _load_predictor(args):
    from .models.base import load_checkpoint
    from .models.hog_svm import HogSvmBaseline

    p = Path(args.model)
    if not p.exists():
        raise CliError(f"model {p} does not exist")
    try:
        if p.is_file() and p.suffix == ".json" and json.loads(p.read_text()).get("format") == "idseg-hog-svm":
            return HogSvmBaseline.load(p), "HOG/SVM", None
        if p.is_dir() and (p / "hog_svm.json").exists():
            return HogSvmBaseline.load(p / "hog_svm.json"), "HOG/SVM", None
        ckpt = p / "checkpoint" if (p / "checkpoint" / "model.json").exists() else p
        model = load_checkpoint(ckpt)
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        raise CliError(f"cannot load model {p}: {e}") from e
    if model.spec.num_classes != 2:
        raise CliError(f"checkpoint predicts {model.spec.num_classes} classes; datasets are binary")
    return model, f"{model.spec.arch.value} {model.spec.input_size}", model.spec.input_size


def cmd_eval(args) -> None:
    from .data.io import read_dataset
    from .evaluation import benchmark_inference, evaluate, render_report

    root = Path(args.dataset)
    _require_splits(root, args.split)
    if args.perfect_oracle:
        predictor, method, size = None, "perfect-oracle", None
    elif args.model:
        predictor, method, size = _load_predictor(args)
    else:
        raise CliError("give --model or --perfect-oracle")
    if args.method:
        method = args.method

    out = Path(args.out)
    RunManifest(
        "eval", args.argv,
        {"split": args.split, "benchmark": args.benchmark, "n": args.n, "warmup": args.warmup, "method": method},
        {"seed": args.seed}, {"dataset": str(root), "model": args.model},
        {"report": str(out / "report.csv"), "summary": str(out / "report.json")},
    ).write(out)
    samples = read_dataset(root, args.split)
    if predictor is None:
        truth = {id(s.image): s.mask for s in samples}
        predictor = lambda img: truth[id(img)].copy()  # noqa: E731
    report = evaluate(predictor, samples, method, args.train_label)
    timing = None
    if args.benchmark:
        timing = benchmark_inference(
            predictor, [s.image for s in samples], n=args.n, warmup=args.warmup, seed=args.seed,
            model_id=method, input_size=size,
        )
    render_report(report, out, timing)
    for r in report.rows:
        print(f"{r.test:6s} n={r.n:5d} mIoU={r.miou:.4f} std={r.std:.4f} p75={r.p75:.4f}")
    if timing:
        print(f"inference: {timing.mean_seconds:.4f} s/image (std {timing.std_seconds:.4f}, n={timing.n_images})")


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idseg", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("--config", help="generator YAML")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("auto", "train", "val", "test"), default="auto")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("ingest-via", help="rasterize a VIA polygon project into a dataset")
    p.add_argument("--project", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--country-card", default="CHL1")
    p.add_argument("--capture-source", default="Digital")
    p.add_argument("--split", choices=("auto", "train", "val", "test"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_ingest_via)

    p = sub.add_parser("preprocess", help="offline background permutation, gray card or HSV jitter")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", required=True, choices=("background_permuter", "gray_mask", "hsv_jitter"))
    p.add_argument("--backgrounds", help="directory of background images")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train a segmentation model or the HOG/SVM baseline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="train config YAML")
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=("mobileunet", "densenet10", "hog-svm"))
    p.add_argument("--k", type=int, help="DenseNet10 growth rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--input-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--encoder-weights", help="local MobileNetV2 state dict")
    p.add_argument("--no-pretrained", action="store_true", help="random encoder initialization")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or baseline")
    p.add_argument("--model", help="checkpoint directory, train output directory or hog_svm.json")
    p.add_argument("--perfect-oracle", action="store_true", help="predict the ground truth (harness self-test)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--method", help="label for the Method column")
    p.add_argument("--train-label", default="synthetic", help="label for the Train column")
    p.add_argument("--benchmark", action="store_true")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except CliError as e:
        print(f"idseg {args.command}: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
