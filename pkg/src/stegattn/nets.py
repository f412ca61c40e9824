"""Fully-convolutional encoder-decoder backbone shared by both attention models.

Four stride-2 encoder stages with a mirrored skip-connected decoder; the
output head squashes to the unit interval.  GroupNorm keeps every forward
pass independent of batch composition, which the deterministic pipeline
relies on.
"""

from __future__ import annotations

import torch
import torch.nn as nn

DOWNSAMPLE_FACTOR = 16
MIN_NETWORK_SIDE = 32

DEFAULT_WIDTHS = (16, 32, 64, 96, 128)


def check_spatial(x: torch.Tensor) -> None:
    h, w = x.shape[-2], x.shape[-1]
    if h < MIN_NETWORK_SIDE or w < MIN_NETWORK_SIDE:
        raise ValueError(f"network input sides must be >= {MIN_NETWORK_SIDE}, got {h}x{w}")
    if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
        raise ValueError(
            f"network input sides must be divisible by {DOWNSAMPLE_FACTOR}, got {h}x{w}"
        )


def _norm(channels: int) -> nn.GroupNorm:
    groups = 4 if channels % 4 == 0 else 1
    return nn.GroupNorm(groups, channels)


class ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
            _norm(cout),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class Encoder(nn.Module):
    """Stem plus four stride-2 stages; returns features at every scale."""

    def __init__(self, in_channels: int, widths=DEFAULT_WIDTHS):
        super().__init__()
        self.stem = ConvBlock(in_channels, widths[0])
        self.downs = nn.ModuleList(
            ConvBlock(widths[i], widths[i + 1], stride=2) for i in range(4)
        )

    def forward(self, x) -> list[torch.Tensor]:
        feats = [self.stem(x)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        return feats


class Decoder(nn.Module):
    """Mirrored upsampling path with skip concatenation and a sigmoid head.

    ``head_bias`` sets where the untrained sigmoid output starts; a
    negative value starts the map near empty, which avoids an initial
    area-penalty collapse when the output is an attention map.
    """

    def __init__(self, out_channels: int, widths=DEFAULT_WIDTHS, head_bias: float = 0.0):
        super().__init__()
        self.ups = nn.ModuleList(
            ConvBlock(widths[i + 1] + widths[i], widths[i]) for i in reversed(range(4))
        )
        self.head = nn.Conv2d(widths[0], out_channels, 1)
        nn.init.constant_(self.head.bias, head_bias)
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, feats: list[torch.Tensor]) -> torch.Tensor:
        y = feats[-1]
        for i, up in enumerate(self.ups):
            skip = feats[len(feats) - 2 - i]
            y = up(torch.cat([self.upsample(y), skip], dim=1))
        return torch.sigmoid(self.head(y))
