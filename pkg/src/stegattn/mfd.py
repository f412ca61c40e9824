"""Feature-distortion attention model.

Trains in two phases: first the encoder-decoder initializes as an
autoencoder, then the decoder is reset and learns to emit an attention
map that keeps a frozen task network's features stable when embedding is
simulated as attention-scaled noise.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from stegattn.errors import PreconditionError, TrainingDivergedError
from stegattn.nets import Decoder, Encoder, check_spatial
from stegattn.rng import fork_seed, uniform_noise_seed
from stegattn.tensor_core import AttentionMap, ImageTensor

PENALTY_EPS = 1e-6
DEFAULT_NOISE_AMPLITUDE = 8.0 / 255.0


@dataclass
class MfdTrainConfig:
    """Per-phase training knobs.

    Defaults mirror the phase split of Nesterov-momentum SGD at 1e-5 for
    phase 1 and Adam at 0.01 for phase 2; both the optimizer kind and the
    learning rate resolve from the phase when left as None and are
    independently configurable.
    """

    phase: int
    learning_rate: float | None = None
    optimizer: str | None = None  # "nesterov" | "adam"
    batch_size: int = 32
    noise_amplitude: float = DEFAULT_NOISE_AMPLITUDE
    epochs: int = 30

    def __post_init__(self):
        if self.phase not in (1, 2):
            raise ValueError(f"phase must be 1 or 2, got {self.phase}")
        if self.learning_rate is None:
            self.learning_rate = 1e-5 if self.phase == 1 else 0.01
        if self.optimizer is None:
            self.optimizer = "nesterov" if self.phase == 1 else "adam"
        if self.optimizer not in ("nesterov", "adam"):
            raise ValueError(f"optimizer must be 'nesterov' or 'adam', got {self.optimizer}")
        if not 0.0 <= self.noise_amplitude <= 1.0:
            raise ValueError(f"noise_amplitude must be in [0, 1], got {self.noise_amplitude}")

    def make_optimizer(self, params) -> torch.optim.Optimizer:
        if self.optimizer == "nesterov":
            return torch.optim.SGD(params, lr=self.learning_rate, momentum=0.9, nesterov=True)
        return torch.optim.Adam(params, lr=self.learning_rate)


class MfdNetwork(nn.Module):
    """Encoder-decoder with a phase-dependent decoder head.

    Phase 1 reconstructs the input image (C output channels); phase 2
    emits a one-channel attention map.  Switching to phase 2 resets every
    decoder weight while the encoder carries over.
    """

    def __init__(self, in_channels: int = 3, phase: int = 1):
        super().__init__()
        if phase not in (1, 2):
            raise ValueError(f"phase must be 1 or 2, got {phase}")
        self.in_channels = in_channels
        self.phase = phase
        self.encoder = Encoder(in_channels)
        self.decoder = Decoder(out_channels=in_channels if phase == 1 else 1)

    def configure_phase(self, phase: int, seed: int = 0) -> None:
        """Move to the given phase with a freshly initialized decoder."""
        if phase not in (1, 2):
            raise ValueError(f"phase must be 1 or 2, got {phase}")
        self.phase = phase
        torch.manual_seed(fork_seed(seed, f"mfd-decoder-phase{phase}"))
        self.decoder = Decoder(out_channels=self.in_channels if phase == 1 else 1)

    def encoder_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        check_spatial(x)
        return self.encoder(x if x.ndim == 4 else x[None])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_spatial(x)
        batched = x.ndim == 4
        if not batched:
            x = x[None]
        out = self.decoder(self.encoder(x))
        return out if batched else out[0]


def make_mfd_network(in_channels: int = 3, seed: int = 0, phase: int = 1) -> MfdNetwork:
    torch.manual_seed(fork_seed(seed, "mfd-init"))
    return MfdNetwork(in_channels, phase=phase)


def mfd_forward(net: MfdNetwork, image: ImageTensor) -> AttentionMap:
    """Deterministic inference-mode attention for one image (phase 2 only)."""
    if net.phase != 2:
        raise PreconditionError("attention inference needs a phase-2 network")
    net.eval()
    with torch.no_grad():
        atten = net(image.to_tensor())
    return AttentionMap.from_tensor(atten)


def simulate_embed(
    cover: torch.Tensor,
    attention: torch.Tensor,
    noise_amplitude: float,
    seeds: int | list[int],
) -> torch.Tensor:
    """Differentiable embedding stand-in: clip(C + A * U, 0, 1).

    U is uniform noise in [-noise_amplitude, +noise_amplitude] drawn from
    a per-image generator, so results are reproducible and independent of
    batch order when per-image seeds are supplied.  Pixels with zero
    attention are untouched.
    """
    if attention.shape[-2:] != cover.shape[-2:]:
        raise ValueError(
            f"attention {tuple(attention.shape)} does not match cover {tuple(cover.shape)}"
        )
    batched = cover.ndim == 4
    covers = cover if batched else cover[None]
    attens = attention if batched else attention[None]
    if attens.ndim == 3:
        attens = attens[:, None] if batched else attens[None]
    if isinstance(seeds, int):
        seeds = [uniform_noise_seed(seeds, i) for i in range(covers.shape[0])]
    if len(seeds) != covers.shape[0]:
        raise ValueError(f"need {covers.shape[0]} seeds, got {len(seeds)}")

    noises = []
    for i, s in enumerate(seeds):
        gen = torch.Generator().manual_seed(int(s) & (2**63 - 1))
        u = torch.rand(covers.shape[1:], generator=gen, dtype=covers.dtype)
        noises.append(2.0 * u - 1.0)
    noise = torch.stack(noises) * noise_amplitude
    out = torch.clamp(covers + attens * noise, 0.0, 1.0)
    return out if batched else out[0]


def mfd_area_penalty_t(mean_attention: torch.Tensor) -> torch.Tensor:
    """Soft area bound 0.5 * (1.1 E)**(8E - 0.1), clamped away from E = 0.

    Diverges as E -> 0+, so vanishing attention during training is pushed
    back instead of producing a non-finite loss.
    """
    e = mean_attention.clamp_min(PENALTY_EPS)
    return 0.5 * (1.1 * e) ** (8.0 * e - 0.1)


def mfd_area_penalty(mean_attention: float) -> float:
    if mean_attention > 1.0:
        raise ValueError(f"mean attention must be <= 1, got {mean_attention}")
    e = max(mean_attention, PENALTY_EPS)
    return float(0.5 * (1.1 * e) ** (8.0 * e - 0.1))


def mfd_loss_t(
    cover: torch.Tensor,
    embedded: torch.Tensor,
    atten_cover: torch.Tensor,
    atten_embedded: torch.Tensor,
    feats_cover: torch.Tensor,
    feats_embedded: torch.Tensor,
) -> tuple[torch.Tensor, dict]:
    """Sum of the four phase-2 terms plus a per-term breakdown.

    fmrl: mean squared feature difference; cerl: mean absolute image
    difference; atrl: mean absolute attention difference; atap: area
    penalty on the cover attention.
    """
    if cover.shape != embedded.shape:
        raise ValueError(f"cover {tuple(cover.shape)} vs embedded {tuple(embedded.shape)}")
    if atten_cover.shape != atten_embedded.shape:
        raise ValueError(
            f"attention shapes differ: {tuple(atten_cover.shape)} vs "
            f"{tuple(atten_embedded.shape)}"
        )
    if feats_cover.shape != feats_embedded.shape:
        raise ValueError(
            f"feature shapes differ: {tuple(feats_cover.shape)} vs "
            f"{tuple(feats_embedded.shape)}"
        )
    fmrl = ((feats_cover - feats_embedded) ** 2).mean()
    cerl = (cover - embedded).abs().mean()
    atrl = (atten_cover - atten_embedded).abs().mean()
    atap = mfd_area_penalty_t(atten_cover.mean())
    total = fmrl + cerl + atrl + atap
    return total, {"fmrl": fmrl, "cerl": cerl, "atrl": atrl, "atap": atap}


class SmallClassifier(nn.Module):
    """Compact classifier used as the frozen task network at desk scale.

    The trunk output (after the last convolutional stage) is the feature
    tap; the head adds pooling and a linear layer for labels.
    """

    def __init__(self, in_channels: int = 3, num_classes: int = 4):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Conv2d(in_channels, 16, 3, stride=2, padding=1),
            nn.GroupNorm(4, 16),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.GroupNorm(4, 32),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.GroupNorm(4, 64),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(64, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.trunk(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.pool(self.trunk(x)).flatten(1))


def make_small_classifier(in_channels: int = 3, num_classes: int = 4, seed: int = 0):
    torch.manual_seed(fork_seed(seed, "classifier-init"))
    return SmallClassifier(in_channels, num_classes)


def train_classifier(
    net: SmallClassifier,
    images: torch.Tensor,
    labels: torch.Tensor,
    epochs: int = 10,
    learning_rate: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
) -> SmallClassifier:
    """Fit the desk-scale task classifier before it is frozen."""
    optimizer = torch.optim.Adam(net.parameters(), lr=learning_rate)
    criterion = nn.CrossEntropyLoss()
    n = images.shape[0]
    net.train()
    for epoch in range(epochs):
        gen = torch.Generator().manual_seed(fork_seed(seed, f"clf-batches/{epoch}"))
        for i in range(0, n, batch_size):
            batch = torch.randperm(n, generator=gen)[i : i + batch_size]
            loss = criterion(net(images[batch]), labels[batch])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    net.eval()
    return net


class FeatureExtractor:
    """Frozen wrapper exposing a classifier trunk as flat feature vectors.

    Parameters are immutable for the extractor's lifetime; the wrapped
    module is put in eval mode, so identical inputs give identical
    features.
    """

    def __init__(self, classifier: nn.Module):
        self.classifier = classifier
        self.classifier.eval()
        for p in self.classifier.parameters():
            p.requires_grad_(False)

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        batched = x.ndim == 4
        feats = self.classifier.features(x if batched else x[None]).flatten(1)
        return feats if batched else feats[0]

    def state_digest(self) -> str:
        from stegattn.checkpoint import module_digest

        return module_digest(self.classifier)


class ConcatFeatureExtractor:
    """Multiple frozen extractors concatenated along the feature axis."""

    def __init__(self, extractors: list):
        if not extractors:
            raise ValueError("need at least one extractor")
        self.extractors = list(extractors)

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        feats = [e(x) for e in self.extractors]
        return torch.cat(feats, dim=-1)


def make_resnet18_extractor(weights_path: str | None = None) -> FeatureExtractor:
    """ResNet-18 trunk for 224x224 runs; random-initialized unless a local
    weights file is supplied (this environment cannot download weights)."""
    try:
        from torchvision.models import resnet18
    except ImportError as exc:
        raise ImportError("torchvision is required for the resnet18 extractor") from exc

    net = resnet18(weights=None)
    if weights_path is not None:
        net.load_state_dict(torch.load(weights_path, map_location="cpu", weights_only=True))

    class _Trunk(nn.Module):
        def __init__(self, backbone):
            super().__init__()
            self.backbone = backbone

        def features(self, x):
            b = self.backbone
            x = b.maxpool(b.relu(b.bn1(b.conv1(x))))
            x = b.layer4(b.layer3(b.layer2(b.layer1(x))))
            return x

        def forward(self, x):
            return self.backbone(x)

    return FeatureExtractor(_Trunk(net))


def train_mfd_phase1(net: MfdNetwork, images: torch.Tensor, cfg: MfdTrainConfig, seed: int = 0):
    """Autoencoder initialization of the encoder weights.

    Returns (net, metrics); metrics carry the mean absolute reconstruction
    error per epoch, epoch 0 being the untrained evaluation.
    """
    if cfg.phase != 1:
        raise PreconditionError("train_mfd_phase1 expects a phase-1 config")
    if net.phase != 1:
        raise PreconditionError("network is not in phase-1 configuration")
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) tensor")

    optimizer = cfg.make_optimizer(net.parameters())
    n = images.shape[0]

    def evaluate() -> float:
        net.eval()
        with torch.no_grad():
            return float((net(images) - images).abs().mean())

    metrics = [{"epoch": 0, "recon_mae": evaluate()}]
    last_state = copy.deepcopy(net.state_dict())
    for epoch in range(1, cfg.epochs + 1):
        net.train()
        gen = torch.Generator().manual_seed(fork_seed(seed, f"mfd1-batches/{epoch}"))
        order = torch.randperm(n, generator=gen)
        for i in range(0, n, cfg.batch_size):
            batch = order[i : i + cfg.batch_size]
            loss = (net(images[batch]) - images[batch]).abs().mean()
            if not math.isfinite(loss.item()):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", last_state=last_state, metrics=metrics
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        metrics.append({"epoch": epoch, "recon_mae": evaluate()})
        last_state = copy.deepcopy(net.state_dict())
    return net, metrics


def train_mfd_phase2(
    net: MfdNetwork,
    extractor,
    images: torch.Tensor,
    cfg: MfdTrainConfig,
    seed: int = 0,
):
    """Attention-generation phase against the frozen feature extractor.

    Per step: attention on the cover, simulated embedding scaled by it,
    attention recomputed on the result with shared weights, then the
    four-term loss.  Returns (net, metrics) with all four terms logged per
    epoch.
    """
    if cfg.phase != 2:
        raise PreconditionError("train_mfd_phase2 expects a phase-2 config")
    if net.phase != 2:
        raise PreconditionError(
            "network is not in phase-2 configuration; load a phase-1 checkpoint and "
            "call configure_phase(2)"
        )
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) tensor")

    optimizer = cfg.make_optimizer(net.parameters())
    n = images.shape[0]

    def evaluate() -> dict:
        net.eval()
        with torch.no_grad():
            a_c = net(images)
            seeds = [uniform_noise_seed(seed, i) for i in range(n)]
            s = simulate_embed(images, a_c, cfg.noise_amplitude, seeds)
            a_s = net(s)
            f_c = extractor(images)
            f_s = extractor(s)
            _, parts = mfd_loss_t(images, s, a_c, a_s, f_c, f_s)
        return {k: float(v) for k, v in parts.items()} | {"mean_attention": float(a_c.mean())}

    metrics = [{"epoch": 0, **evaluate()}]
    last_state = copy.deepcopy(net.state_dict())
    for epoch in range(1, cfg.epochs + 1):
        net.train()
        gen = torch.Generator().manual_seed(fork_seed(seed, f"mfd2-batches/{epoch}"))
        order = torch.randperm(n, generator=gen)
        for i in range(0, n, cfg.batch_size):
            batch = order[i : i + cfg.batch_size]
            c = images[batch]
            a_c = net(c)
            seeds = [uniform_noise_seed(seed, int(j)) for j in batch]
            s = simulate_embed(c, a_c, cfg.noise_amplitude, seeds)
            a_s = net(s)
            with torch.no_grad():
                f_c = extractor(c)
            f_s = extractor(s)
            loss, _ = mfd_loss_t(c, s, a_c, a_s, f_c, f_s)
            if not math.isfinite(loss.item()):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", last_state=last_state, metrics=metrics
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        metrics.append({"epoch": epoch, **evaluate()})
        last_state = copy.deepcopy(net.state_dict())
    return net, metrics
