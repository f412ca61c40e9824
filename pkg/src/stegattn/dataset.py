"""Synthetic corpora and lossless image I/O.

The toy corpus (flat fields, gradients and checkerboards with pasted
noise patches) drives desk-scale training; the photo-like corpus emulates
the LSB statistics of camera images (spatial correlation plus the comb
histogram left by tone-mapping an 8-bit sensor signal) for the
steganalysis harness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from stegattn.rng import fork_seed
from stegattn.tensor_core import ImageTensor

log = logging.getLogger(__name__)

LOSSY_SUFFIXES = {".jpg", ".jpeg", ".webp"}

BACKGROUND_KINDS = ("flat", "gradient", "checkerboard")


@dataclass
class ToyDataset:
    """Images plus the masks of their pasted noise patches and a background
    family label per image (used to pretrain the task classifier)."""

    images: np.ndarray  # (N, H, W, C) uint8
    patch_masks: np.ndarray  # (N, H, W) bool
    labels: np.ndarray  # (N,) int64, index into BACKGROUND_KINDS

    def __len__(self) -> int:
        return self.images.shape[0]

    def image(self, i: int) -> ImageTensor:
        return ImageTensor(self.images[i])

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        arr = self.images.astype(np.float32) / 255.0
        return torch.from_numpy(arr.transpose(0, 3, 1, 2)).to(dtype)


def _background(kind: str, size: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "flat":
        return np.broadcast_to(rng.uniform(0.1, 0.9, channels), (size, size, channels)).copy()
    if kind == "gradient":
        lo, hi = sorted(rng.uniform(0.05, 0.95, 2))
        ramp = np.linspace(lo, hi, size)
        axis = rng.integers(0, 2)
        grid = np.tile(ramp, (size, 1)) if axis == 0 else np.tile(ramp[:, None], (1, size))
        shade = rng.uniform(0.8, 1.2, channels)
        return np.clip(grid[:, :, None] * shade, 0, 1)
    if kind == "checkerboard":
        # Mild contrast and large cells: median smoothing preserves periodic
        # structure, so harsh boards would put an irreducible floor under
        # the blended-image variance loss.
        cell = int(rng.choice([size // 4, size // 2]))
        a = rng.uniform(0.2, 0.7)
        b = a + rng.uniform(0.08, 0.2)
        yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        board = np.where(((yy // cell) + (xx // cell)) % 2 == 0, a, b)
        return np.repeat(board[:, :, None], channels, axis=2)
    raise ValueError(f"unknown background kind {kind!r}")


def toy_corpus(n: int = 64, size: int = 64, channels: int = 3, seed: int = 0) -> ToyDataset:
    """Structured backgrounds with strong uniform-noise patches pasted in."""
    images = np.zeros((n, size, size, channels), dtype=np.uint8)
    masks = np.zeros((n, size, size), dtype=bool)
    labels = np.zeros(n, dtype=np.int64)
    schedule = ("flat", "gradient", "flat", "gradient", "checkerboard")
    for i in range(n):
        rng = np.random.default_rng(fork_seed(seed, f"toy/{i}"))
        kind = schedule[i % len(schedule)]
        labels[i] = BACKGROUND_KINDS.index(kind)
        img = _background(kind, size, channels, rng)
        for _ in range(int(rng.integers(1, 4))):
            ph = int(rng.integers(size // 8, size // 3))
            pw = int(rng.integers(size // 8, size // 3))
            r0 = int(rng.integers(0, size - ph))
            c0 = int(rng.integers(0, size - pw))
            img[r0 : r0 + ph, c0 : c0 + pw] = rng.random((ph, pw, channels))
            masks[i, r0 : r0 + ph, c0 : c0 + pw] = True
        images[i] = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return ToyDataset(images=images, patch_masks=masks, labels=labels)


def photo_corpus(n: int, size: int = 64, channels: int = 3, seed: int = 0) -> list[ImageTensor]:
    """Photo-like images for detector calibration.

    Smooth correlated content (blurred noise around a shared luminance
    field) is quantized to 8 bits and then tone-mapped with a second
    rounding pass; the double quantization leaves the comb-shaped
    histogram that gives the pair-statistics detectors their natural-image
    behavior.
    """
    out = []
    for i in range(n):
        rng = np.random.default_rng(fork_seed(seed, f"photo/{i}"))
        sigma = rng.uniform(2.0, 5.0)
        luma = gaussian_filter(rng.normal(size=(size, size)), sigma)
        planes = []
        for _ in range(channels):
            chroma = gaussian_filter(rng.normal(size=(size, size)), sigma) * 0.3
            planes.append(luma + chroma)
        field = np.stack(planes, axis=2)
        field = (field - field.min()) / (field.max() - field.min() + 1e-12)
        # sensor noise of a few gray levels keeps adjacent pixels slightly
        # apart, which the group-based detectors rely on
        noise = rng.normal(scale=rng.uniform(1.5, 3.0), size=field.shape)
        sensor = np.clip(np.rint(field * 255.0 + noise), 0, 255)
        gamma = rng.uniform(0.45, 0.6)
        mapped = np.clip(np.rint(255.0 * (sensor / 255.0) ** gamma), 0, 255).astype(np.uint8)
        out.append(ImageTensor(mapped))
    return out


def replace_lsb(image: ImageTensor, rate: float, seed: int) -> ImageTensor:
    """Replace the LSB of a random fraction of pixel-channel bytes with
    uniform random bits (the classic LSB-replacement stego stand-in)."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    pixels = image.pixels.copy()
    chosen = rng.random(pixels.shape) < rate
    bits = rng.integers(0, 2, pixels.shape, dtype=np.uint8)
    pixels[chosen] = (pixels[chosen] & 0xFE) | bits[chosen]
    return ImageTensor(pixels)


def load_image(path: str | Path) -> ImageTensor:
    """Read an image as RGB (or grayscale) bytes.

    Lossy formats are accepted for reading; embedding into them is
    unsupported and the CLI warns before doing so.
    """
    path = Path(path)
    with Image.open(path) as img:
        if img.mode in ("L", "I;16"):
            arr = np.asarray(img.convert("L"), dtype=np.uint8)[:, :, None]
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return ImageTensor(arr)


def save_png(image: ImageTensor, path: str | Path) -> None:
    """Write lossless 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = image.pixels
    pil = Image.fromarray(arr[:, :, 0] if arr.shape[2] == 1 else arr)
    pil.save(path, format="PNG")


def load_folder(path: str | Path) -> list[tuple[str, ImageTensor]]:
    """All images in a directory, sorted by filename."""
    path = Path(path)
    entries = []
    for p in sorted(path.iterdir()):
        if p.suffix.lower() in {".png", ".bmp", ".tif", ".tiff"} | LOSSY_SUFFIXES:
            entries.append((p.name, load_image(p)))
    if not entries:
        raise ValueError(f"no images found in {path}")
    return entries
