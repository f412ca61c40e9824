"""Texture-complexity attention model.

The network predicts, per pixel, how much smoothing toward a texture-free
target the image tolerates; training minimizes the per-window variance of
the blended result under a soft attention-area budget.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch

from stegattn.errors import TrainingDivergedError
from stegattn.nets import Decoder, Encoder, check_spatial
from stegattn.rng import fork_seed
from stegattn.tensor_core import AttentionMap, ImageTensor, blend, median_smooth, texture_loss


@dataclass
class ItcTrainConfig:
    """Training knobs for the texture-attention model.

    ``theta`` is the target attention-area fraction; it is recorded for
    reference but not enforced as a hard bound (the soft area penalty
    replaces it).  Neither ``theta`` nor ``lambda_weight`` has a validated
    reference value; both are exposed here with plain defaults.
    """

    lambda_weight: float = 0.5
    theta: float = 0.25
    kernel: int = 7
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 20

    def __post_init__(self):
        if not 0.0 <= self.lambda_weight <= 1.0:
            raise ValueError(f"lambda_weight must be in [0, 1], got {self.lambda_weight}")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")


class ItcNetwork(torch.nn.Module):
    """Encoder-decoder that maps an image to a unit-interval attention map."""

    def __init__(self, in_channels: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.encoder = Encoder(in_channels)
        self.decoder = Decoder(out_channels=1, head_bias=-2.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_spatial(x)
        batched = x.ndim == 4
        if not batched:
            x = x[None]
        atten = self.decoder(self.encoder(x))
        return atten if batched else atten[0]


def make_itc_network(in_channels: int = 3, seed: int = 0) -> ItcNetwork:
    torch.manual_seed(fork_seed(seed, "itc-init"))
    return ItcNetwork(in_channels)


def itc_forward(net: ItcNetwork, image: ImageTensor) -> AttentionMap:
    """Deterministic inference-mode attention for one image."""
    net.eval()
    with torch.no_grad():
        atten = net(image.to_tensor())
    return AttentionMap.from_tensor(atten)


def itc_area_penalty_t(mean_attention: torch.Tensor) -> torch.Tensor:
    """Soft area budget E**(3 - 2E); 0 at empty attention, 1 at full."""
    return mean_attention ** (3.0 - 2.0 * mean_attention)


def itc_area_penalty(mean_attention: float) -> float:
    if not 0.0 <= mean_attention <= 1.0:
        raise ValueError(f"mean attention must be in [0, 1], got {mean_attention}")
    if mean_attention == 0.0:
        return 0.0
    return float(mean_attention ** (3.0 - 2.0 * mean_attention))


def itc_loss(
    cover: torch.Tensor,
    attention: torch.Tensor,
    cfg: ItcTrainConfig,
    smoothed: torch.Tensor | None = None,
) -> torch.Tensor:
    """lambda * var-pool loss of the blend + (1 - lambda) * area penalty.

    ``smoothed`` is the texture-free target; when omitted it is computed
    here (it is a fixed target, never backpropagated through).
    """
    if attention.shape[-2:] != cover.shape[-2:]:
        raise ValueError(
            f"attention {tuple(attention.shape)} does not match cover {tuple(cover.shape)}"
        )
    if smoothed is None:
        with torch.no_grad():
            smoothed = median_smooth(cover, cfg.kernel)
    weighted = blend(cover, smoothed, attention)
    var = texture_loss(weighted, cfg.kernel)
    penalty = itc_area_penalty_t(attention.mean())
    return cfg.lambda_weight * var + (1.0 - cfg.lambda_weight) * penalty


def train_itc(net: ItcNetwork, images: torch.Tensor, cfg: ItcTrainConfig, seed: int = 0):
    """Train the texture-attention model on an (N, C, H, W) float dataset.

    Returns (net, metrics) where metrics holds one row per epoch (epoch 0
    is the untrained evaluation) with the weighted-image variance loss,
    the area penalty, and the mean attention, plus a final
    ``texture_reduction`` entry of 1 - weighted/cover variance loss.
    """
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) tensor")

    with torch.no_grad():
        smoothed = median_smooth(images, cfg.kernel)
        cover_var = float(texture_loss(images, cfg.kernel))

    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    n = images.shape[0]

    def evaluate() -> dict:
        net.eval()
        with torch.no_grad():
            atten = net(images)
            weighted = blend(images, smoothed, atten)
            var = float(texture_loss(weighted, cfg.kernel))
            pen = float(itc_area_penalty_t(atten.mean()))
            mean_a = float(atten.mean())
        return {"var_loss": var, "area_penalty": pen, "mean_attention": mean_a}

    metrics = [{"epoch": 0, **evaluate()}]
    last_state = copy.deepcopy(net.state_dict())
    for epoch in range(1, cfg.epochs + 1):
        net.train()
        gen = torch.Generator().manual_seed(fork_seed(seed, f"itc-batches/{epoch}"))
        order = torch.randperm(n, generator=gen)
        for i in range(0, n, cfg.batch_size):
            batch = order[i : i + cfg.batch_size]
            loss = itc_loss(images[batch], net(images[batch]), cfg, smoothed[batch])
            if not math.isfinite(loss.item()):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", last_state=last_state, metrics=metrics
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        metrics.append({"epoch": epoch, **evaluate()})
        last_state = copy.deepcopy(net.state_dict())

    metrics[-1]["texture_reduction"] = (
        1.0 - metrics[-1]["var_loss"] / cover_var if cover_var > 0 else 0.0
    )
    return net, metrics
