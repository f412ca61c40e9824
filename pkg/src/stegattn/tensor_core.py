"""Image/attention data types and the texture-complexity numerics.

Floats are the canonical compute view (unit interval, differentiable);
bytes appear only at the codec and file boundaries.  All functions here
are pure and safe to call from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

MIN_IMAGE_SIDE = 8


@dataclass(frozen=True)
class ImageTensor:
    """An H×W×C image stored as 8-bit pixels with a float view.

    ``pixels`` is uint8 with shape (H, W, C); channels must be 1 or 3 and
    both sides at least 8 so kernel-7 windows fit with padding.
    """

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {p.dtype}")
        if p.ndim != 3 or p.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be (H, W, 1|3), got {p.shape}")
        if p.shape[0] < MIN_IMAGE_SIDE or p.shape[1] < MIN_IMAGE_SIDE:
            raise ValueError(f"image sides must be >= {MIN_IMAGE_SIDE}, got {p.shape[:2]}")
        p.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def floats(self) -> np.ndarray:
        """Unit-interval float32 view, pixel / 255."""
        return self.pixels.astype(np.float32) / 255.0

    @classmethod
    def from_floats(cls, values: np.ndarray) -> "ImageTensor":
        """Quantize unit-interval floats to bytes (round, clip)."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        bytes_ = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
        return cls(bytes_)

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Float tensor with shape (C, H, W) in [0, 1]."""
        arr = self.pixels.astype(np.float32) / 255.0
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).to(dtype)

    @classmethod
    def from_tensor(cls, t: torch.Tensor) -> "ImageTensor":
        """Inverse of :meth:`to_tensor` (accepts (C, H, W) in [0, 1])."""
        arr = t.detach().cpu().numpy().transpose(1, 2, 0)
        return cls.from_floats(arr)


@dataclass(frozen=True)
class AttentionMap:
    """H×W unit-interval map of per-pixel embedding tolerance."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"attention must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("attention contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("attention values must lie in [0, 1]")
        v.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Float tensor with shape (1, H, W)."""
        return torch.from_numpy(self.values.copy()).to(dtype)[None]

    @classmethod
    def from_tensor(cls, t: torch.Tensor) -> "AttentionMap":
        arr = t.detach().cpu().numpy()
        arr = arr.reshape(arr.shape[-2], arr.shape[-1])
        return cls(np.clip(arr.astype(np.float64), 0.0, 1.0))


def _check_kernel(kernel: int, height: int, width: int) -> None:
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError(f"kernel must be odd and positive, got {kernel}")
    if kernel > min(height, width):
        raise ValueError(
            f"kernel {kernel} larger than image min side {min(height, width)}"
        )


def var_pool_2d(x: torch.Tensor, kernel: int) -> torch.Tensor:
    """Per-window variance map: E(X**2) - E(X)**2 over kernel neighborhoods.

    Accepts (..., H, W); output keeps the input shape (replicate padding at
    the borders).  Differentiable with respect to ``x``; every output value
    is >= 0.
    """
    if not torch.isfinite(x).all():
        raise ValueError("input contains non-finite values")
    h, w = x.shape[-2], x.shape[-1]
    _check_kernel(kernel, h, w)

    lead = x.shape[:-2]
    x4 = x.reshape(1, -1, h, w) if lead else x.reshape(1, 1, h, w)
    pad = kernel // 2
    xp = F.pad(x4, (pad, pad, pad, pad), mode="replicate")
    mean = F.avg_pool2d(xp, kernel, stride=1)
    mean_sq = F.avg_pool2d(xp * xp, kernel, stride=1)
    out = (mean_sq - mean * mean).clamp_min(0.0)
    return out.reshape(*lead, h, w)


def median_smooth(x: torch.Tensor, kernel: int = 7) -> torch.Tensor:
    """Window-median smoothing applied per channel.

    Removes fine texture while keeping object boundaries; the mean
    per-window variance of the result never exceeds the input's.
    """
    h, w = x.shape[-2], x.shape[-1]
    _check_kernel(kernel, h, w)

    lead = x.shape[:-2]
    x4 = x.reshape(-1, 1, h, w) if lead else x.reshape(1, 1, h, w)
    pad = kernel // 2
    xp = F.pad(x4, (pad, pad, pad, pad), mode="replicate")
    windows = xp.unfold(2, kernel, 1).unfold(3, kernel, 1)
    out = windows.reshape(x4.shape[0], 1, h, w, kernel * kernel).median(dim=-1).values
    return out.reshape(*lead, h, w)


def blend(cover: torch.Tensor, smoothed: torch.Tensor, attention: torch.Tensor) -> torch.Tensor:
    """Per-pixel convex combination: attention picks the smoothed image.

    ``attention`` may be (H, W) or carry a singleton channel axis; it is
    broadcast across channels.  At attention 0 returns ``cover`` exactly,
    at 1 returns ``smoothed`` exactly.
    """
    if cover.shape != smoothed.shape:
        raise ValueError(f"cover {tuple(cover.shape)} vs smoothed {tuple(smoothed.shape)}")
    if attention.shape[-2:] != cover.shape[-2:]:
        raise ValueError(
            f"attention {tuple(attention.shape)} does not match image "
            f"{tuple(cover.shape)}"
        )
    return attention * smoothed + (1.0 - attention) * cover


def texture_loss(x: torch.Tensor, kernel: int = 7) -> torch.Tensor:
    """Mean of the per-window variance map over all positions and channels."""
    return var_pool_2d(x, kernel).mean()


def texture_free_image(image: ImageTensor, kernel: int = 7) -> ImageTensor:
    """Median-smoothed stand-in for the ideal texture-free image.

    Its texture loss never exceeds the source image's.
    """
    return ImageTensor.from_tensor(median_smooth(image.to_tensor(torch.float64), kernel))
