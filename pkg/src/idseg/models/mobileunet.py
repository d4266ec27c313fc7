"""UNet expansive path over a MobileNetV2 contracting path."""

from __future__ import annotations

import logging
from pathlib import Path

import torch
import torchvision
from torch import nn
from torch.nn import functional as F

from .base import Arch, ModelSpec, Normalize, SegModel

log = logging.getLogger(__name__)

# slices of torchvision's mobilenet_v2().features ending at strides 2, 4, 8, 16, 32
ENCODER_STAGES = ((0, 2), (2, 4), (4, 7), (7, 14), (14, 19))
ENCODER_CHANNELS = (16, 24, 32, 96, 1280)
DECODER_WIDTHS = (256, 128, 64, 32, 16)


class PretrainedUnavailableError(RuntimeError):
    pass


class DecoderStage(nn.Module):
    """2x upsample, concat skip, two 3x3 conv + BN + ReLU."""

    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch + skip_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x, skip):
        x = F.interpolate(x, size=skip.shape[-2:], mode="nearest")
        return self.body(torch.cat([x, skip], dim=1))


class MobileUNet(SegModel):
    def __init__(self, spec: ModelSpec, encoder_weights: str | Path | None = None):
        super().__init__()
        self.spec = spec
        self.norm = Normalize()
        backbone = torchvision.models.mobilenet_v2(weights=None, width_mult=1.0)
        if spec.pretrained_encoder:
            _load_encoder(backbone, encoder_weights)
        feats = backbone.features
        self.encoder = nn.ModuleList(nn.Sequential(*feats[a:b]) for a, b in ENCODER_STAGES)
        # deepest map is the bottleneck; the rest are skips, plus the input image at full resolution
        skip_ch = list(ENCODER_CHANNELS[:-1][::-1]) + [3]
        in_ch = ENCODER_CHANNELS[-1]
        stages = []
        for w, s in zip(DECODER_WIDTHS, skip_ch):
            stages.append(DecoderStage(in_ch, s, w))
            in_ch = w
        self.decoder = nn.ModuleList(stages)
        self.head = nn.Conv2d(in_ch, spec.num_classes, 1)
        if spec.freeze_encoder:
            for p in self.encoder.parameters():
                p.requires_grad_(False)

    def encode(self, x):
        taps = []
        h = self.norm(x)
        for stage in self.encoder:
            h = stage(h)
            taps.append(h)
        return taps

    def logits(self, x):
        taps = self.encode(x)
        h = taps[-1]
        skips = taps[:-1][::-1] + [x]
        for stage, skip in zip(self.decoder, skips):
            h = stage(h, skip)
        return self.head(h)

    @torch.no_grad()
    def skip_shapes(self) -> tuple[list[int], list[int]]:
        """Spatial sizes of the encoder taps and of each decoder stage output."""
        was_training = self.training
        self.eval()
        x = torch.zeros(1, 3, self.spec.input_size, self.spec.input_size)
        taps = self.encode(x)
        h = taps[-1]
        outs = []
        for stage, skip in zip(self.decoder, taps[:-1][::-1] + [x]):
            h = stage(h, skip)
            outs.append(h.shape[-1])
        self.train(was_training)
        return [t.shape[-1] for t in taps], outs


def _load_encoder(backbone: nn.Module, encoder_weights: str | Path | None) -> None:
    if encoder_weights is not None:
        state = torch.load(encoder_weights, map_location="cpu", weights_only=True)
        missing, _ = backbone.load_state_dict(state, strict=False)
        if any(k.startswith("features.") for k in missing):
            raise PretrainedUnavailableError(f"{encoder_weights} does not hold MobileNetV2 feature weights")
        return
    try:
        ref = torchvision.models.mobilenet_v2(weights=torchvision.models.MobileNet_V2_Weights.IMAGENET1K_V1)
    except Exception as e:  # network or cache failure
        raise PretrainedUnavailableError(
            "ImageNet MobileNetV2 weights could not be loaded "
            f"({type(e).__name__}: {e}); pass encoder_weights=<path> or set pretrained_encoder=False"
        ) from e
    backbone.load_state_dict(ref.state_dict())


def build_mobileunet(spec: ModelSpec, encoder_weights: str | Path | None = None) -> MobileUNet:
    if spec.arch is not Arch.MOBILEUNET:
        raise ValueError(f"spec.arch must be MobileUNet, got {spec.arch.value}")
    model = MobileUNet(spec, encoder_weights)
    taps, outs = model.skip_shapes()
    s = spec.input_size
    expected = [s // 2, s // 4, s // 8, s // 16, s // 32]
    assert taps == expected, f"encoder taps {taps} != {expected}"
    assert outs == taps[:-1][::-1] + [s], f"decoder outputs {outs} do not match skips"
    log.info("MobileUNet(%d): %d trainable parameters", s, model.parameter_count)
    return model
