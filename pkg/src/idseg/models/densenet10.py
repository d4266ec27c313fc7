"""Lightweight fully convolutional DenseNet: 3 dense blocks, 10 composite layers,
one transition down and one transition up.

Layout (input S x S):

    stem 3x3 conv, stride 2 (48)          S/2
    dense block, 3 layers                 S/2  -> skip
    transition down: maxpool, BN-ReLU-1x1 S/4  (256 channels)
    dense block, 4 layers                 S/4
    transition up: 3x3 transposed conv    S/2  (48 channels), concat skip
    dense block, 3 layers                 S/2
    1x1 conv -> classes, bilinear 2x, softmax

The strided stem keeps CPU training affordable: a full-resolution first block
costs about 4x the time and activation memory for no parameter change.

With growth rate 5 this has 210,805 trainable parameters.
"""

from __future__ import annotations

import logging
import warnings

import torch
from torch import nn
from torch.nn import functional as F

from .base import Arch, ModelSpec, Normalize, SegModel

log = logging.getLogger(__name__)

REFERENCE_PARAMS = 210_732
PARAM_TOLERANCE = 0.05

STEM_WIDTH = 48
BLOCK_LAYERS = (3, 4, 3)
TD_WIDTH = 256
TU_WIDTH = 48


class DenseLayer(nn.Sequential):
    def __init__(self, in_ch: int, growth: int, dropout: float):
        super().__init__(
            nn.BatchNorm2d(in_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(in_ch, growth, 3, padding=1),
            nn.Dropout2d(dropout) if dropout > 0 else nn.Identity(),
        )


class DenseBlock(nn.Module):
    def __init__(self, in_ch: int, n_layers: int, growth: int, dropout: float):
        super().__init__()
        self.layers = nn.ModuleList(DenseLayer(in_ch + i * growth, growth, dropout) for i in range(n_layers))
        self.out_channels = in_ch + n_layers * growth

    def forward(self, x):
        for layer in self.layers:
            x = torch.cat([x, layer(x)], dim=1)
        return x


class DenseNet10(SegModel):
    def __init__(self, spec: ModelSpec, dropout: float = 0.1):
        super().__init__()
        self.spec = spec
        k = spec.growth_rate
        n1, n2, n3 = BLOCK_LAYERS
        self.norm = Normalize()
        self.stem = nn.Conv2d(3, STEM_WIDTH, 3, stride=2, padding=1)
        self.down = DenseBlock(STEM_WIDTH, n1, k, dropout)
        self.td = nn.Sequential(
            nn.MaxPool2d(2),
            nn.BatchNorm2d(self.down.out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(self.down.out_channels, TD_WIDTH, 1),
        )
        self.bottleneck = DenseBlock(TD_WIDTH, n2, k, dropout)
        self.tu = nn.ConvTranspose2d(
            self.bottleneck.out_channels, TU_WIDTH, 3, stride=2, padding=1, output_padding=1
        )
        self.up = DenseBlock(TU_WIDTH + self.down.out_channels, n3, k, dropout)
        self.head = nn.Conv2d(self.up.out_channels, spec.num_classes, 1)

    @property
    def n_composite_layers(self) -> int:
        return sum(len(b.layers) for b in (self.down, self.bottleneck, self.up))

    def logits(self, x):
        h = self.stem(self.norm(x))
        skip = self.down(h)
        h = self.bottleneck(self.td(skip))
        h = torch.cat([self.tu(h), skip], dim=1)
        out = self.head(self.up(h))
        return F.interpolate(out, size=x.shape[-2:], mode="bilinear", align_corners=False)


def build_densenet10(spec: ModelSpec, dropout: float = 0.1) -> DenseNet10:
    if spec.arch is not Arch.DENSENET10:
        raise ValueError(f"spec.arch must be DenseNet10, got {spec.arch.value}")
    model = DenseNet10(spec, dropout)
    n = model.parameter_count
    lo, hi = REFERENCE_PARAMS * (1 - PARAM_TOLERANCE), REFERENCE_PARAMS * (1 + PARAM_TOLERANCE)
    if spec.growth_rate == 5 and not (lo <= n <= hi):
        warnings.warn(f"DenseNet10 has {n} parameters, outside [{lo:.0f}, {hi:.0f}]", stacklevel=2)
    log.info("DenseNet10(K=%d, %d): %d trainable parameters", spec.growth_rate, spec.input_size, n)
    return model
