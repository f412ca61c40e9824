"""Attention fusion and the two-phase recoverability finetune.

Fusion merges the texture and feature attentions into the map that drives
embedding: elementwise minimum trades payload for security, elementwise
mean keeps more capacity.  The finetune phases then make each model's
attention reproducible from embedded images: first the texture model
learns against its frozen partner, then the roles swap.
"""

from __future__ import annotations

import copy
import enum

import numpy as np
import torch

from stegattn.errors import PreconditionError
from stegattn.itc import ItcTrainConfig, itc_area_penalty_t
from stegattn.mfd import MfdTrainConfig, mfd_area_penalty_t, simulate_embed
from stegattn.rng import fork_seed, uniform_noise_seed
from stegattn.tensor_core import AttentionMap, blend, median_smooth, texture_loss


class FusionStrategy(enum.Enum):
    MIN = "min"
    MEAN = "mean"

    @classmethod
    def parse(cls, name: str) -> "FusionStrategy":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown fusion strategy {name!r}; use 'min' or 'mean'") from None

    @property
    def label(self) -> str:
        """Strategy name as used in run artifacts and report tables."""
        return self.value.capitalize()


def fuse(a_itc: AttentionMap, a_mfd: AttentionMap, strategy: FusionStrategy) -> AttentionMap:
    """Elementwise min or mean of the two attentions."""
    if a_itc.values.shape != a_mfd.values.shape:
        raise ValueError(
            f"attention shapes differ: {a_itc.values.shape} vs {a_mfd.values.shape}"
        )
    if strategy is FusionStrategy.MIN:
        return AttentionMap(np.minimum(a_itc.values, a_mfd.values))
    return AttentionMap((a_itc.values + a_mfd.values) / 2.0)


def fuse_t(a_itc: torch.Tensor, a_mfd: torch.Tensor, strategy: FusionStrategy) -> torch.Tensor:
    """Tensor variant used inside training graphs."""
    if strategy is FusionStrategy.MIN:
        return torch.minimum(a_itc, a_mfd)
    return (a_itc + a_mfd) / 2.0


def _batches(n: int, batch_size: int, epoch: int, seed: int):
    gen = torch.Generator().manual_seed(fork_seed(seed, f"batches/{epoch}"))
    order = torch.randperm(n, generator=gen)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def finetune_phase1(
    itc_net,
    mfd_net,
    images: torch.Tensor,
    cfg: ItcTrainConfig,
    strategy: FusionStrategy,
    seed: int,
    noise_amplitude: float = 8.0 / 255.0,
    atten_recon_weight: float = 1.0,
):
    """Finetune the texture model for attention recoverability.

    The feature model stays frozen; embedding is simulated with the fused
    attention, and an L1 attention-reconstruction term (cover attention
    vs attention recomputed on the simulated embed, shared weights) is
    added to the texture model's own loss.

    Returns (itc_net, metric rows).
    """
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) tensor")
    mfd_state = copy.deepcopy(mfd_net.state_dict())
    mfd_net.eval()
    for p in mfd_net.parameters():
        p.requires_grad_(False)
    for p in itc_net.parameters():
        p.requires_grad_(True)

    smoothed = median_smooth(images, cfg.kernel)
    optimizer = torch.optim.Adam(itc_net.parameters(), lr=cfg.learning_rate)
    n = images.shape[0]
    lam = cfg.lambda_weight

    def evaluate() -> dict:
        itc_net.eval()
        with torch.no_grad():
            a_i = itc_net(images)
            a_m = mfd_net(images)
            fused = fuse_t(a_i, a_m, strategy)
            seeds = [uniform_noise_seed(seed, i) for i in range(n)]
            simulated = simulate_embed(images, fused, noise_amplitude, seeds)
            a_i_s = itc_net(simulated)
            var = texture_loss(blend(images, smoothed, a_i), cfg.kernel)
            pen = itc_area_penalty_t(a_i.mean())
            atrl = (a_i - a_i_s).abs().mean()
        return {
            "var_loss": float(var),
            "area_penalty": float(pen),
            "atten_recon_l1": float(atrl),
            "mean_attention": float(a_i.mean()),
        }

    metrics = [{"epoch": 0, **evaluate()}]
    for epoch in range(1, cfg.epochs + 1):
        itc_net.train()
        for batch in _batches(n, cfg.batch_size, epoch, seed):
            c = images[batch]
            a_i = itc_net(c)
            with torch.no_grad():
                a_m = mfd_net(c)
            fused = fuse_t(a_i, a_m, strategy)
            seeds = [uniform_noise_seed(seed, int(i)) for i in batch]
            simulated = simulate_embed(c, fused, noise_amplitude, seeds)
            a_i_s = itc_net(simulated)

            var = texture_loss(blend(c, smoothed[batch], a_i), cfg.kernel)
            pen = itc_area_penalty_t(a_i.mean())
            atrl = (a_i - a_i_s).abs().mean()
            loss = lam * var + (1.0 - lam) * pen + atten_recon_weight * atrl
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        metrics.append({"epoch": epoch, **evaluate()})

    for key, value in mfd_net.state_dict().items():
        if not torch.equal(value, mfd_state[key]):
            raise AssertionError(f"frozen feature model changed at {key}")
    for p in mfd_net.parameters():
        p.requires_grad_(True)
    return itc_net, metrics


def finetune_phase2(
    itc_net,
    mfd_net,
    extractor,
    images: torch.Tensor,
    cfg: MfdTrainConfig,
    strategy: FusionStrategy,
    seed: int,
):
    """Finetune the feature model with its original loss, texture model frozen.

    Embedding is simulated with the fused attention so the feature model
    adapts to what actually lands in the image at inference time.

    Returns (mfd_net, metric rows).
    """
    from stegattn.mfd import mfd_loss_t  # local import to avoid cycle at module load

    if cfg.phase != 2:
        raise PreconditionError("finetune_phase2 expects a phase-2 training config")
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) tensor")
    itc_state = copy.deepcopy(itc_net.state_dict())
    itc_net.eval()
    for p in itc_net.parameters():
        p.requires_grad_(False)
    for p in mfd_net.parameters():
        p.requires_grad_(True)

    optimizer = cfg.make_optimizer(mfd_net.parameters())
    n = images.shape[0]

    def evaluate() -> dict:
        mfd_net.eval()
        with torch.no_grad():
            a_m = mfd_net(images)
            a_i = itc_net(images)
            fused = fuse_t(a_i, a_m, strategy)
            seeds = [uniform_noise_seed(seed, i) for i in range(n)]
            s = simulate_embed(images, fused, cfg.noise_amplitude, seeds)
            a_m_s = mfd_net(s)
            f_c = extractor(images)
            f_s = extractor(s)
            _, parts = mfd_loss_t(images, s, a_m, a_m_s, f_c, f_s)
        return {k: float(v) for k, v in parts.items()} | {"mean_attention": float(a_m.mean())}

    metrics = [{"epoch": 0, **evaluate()}]
    for epoch in range(1, cfg.epochs + 1):
        mfd_net.train()
        for batch in _batches(n, cfg.batch_size, epoch, seed):
            c = images[batch]
            a_m = mfd_net(c)
            with torch.no_grad():
                a_i = itc_net(c)
            fused = fuse_t(a_i, a_m, strategy)
            seeds = [uniform_noise_seed(seed, int(i)) for i in batch]
            s = simulate_embed(c, fused, cfg.noise_amplitude, seeds)
            a_m_s = mfd_net(s)
            with torch.no_grad():
                f_c = extractor(c)
            f_s = extractor(s)
            loss, _ = mfd_loss_t(c, s, a_m, a_m_s, f_c, f_s)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        metrics.append({"epoch": epoch, **evaluate()})

    for key, value in itc_net.state_dict().items():
        if not torch.equal(value, itc_state[key]):
            raise AssertionError(f"frozen texture model changed at {key}")
    for p in itc_net.parameters():
        p.requires_grad_(True)
    return mfd_net, metrics
