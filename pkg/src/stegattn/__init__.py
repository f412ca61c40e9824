"""Attention-guided adaptive LSB image steganography.

Two trained attention models decide, per pixel, how many bit planes an
image tolerates for embedding.  A bit-exact codec turns the fused
attention into an embedding plan (with least-significant masking and
seeded permutative straddling), and an analysis harness measures
detectability and feature distortion of the results.
"""

from stegattn.tensor_core import AttentionMap, ImageTensor

__all__ = ["AttentionMap", "ImageTensor"]

__version__ = "0.1.0"
