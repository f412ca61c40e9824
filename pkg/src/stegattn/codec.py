"""Bit-exact embedding/extraction driven by a fused attention map.

The pipeline is: quantize attention into a per-pixel-channel capacity map,
enumerate embeddable (pixel, channel, bit-plane) slots into a plan,
optionally drop low planes (least-significant masking) and scatter/trim
the slot order with a seeded permutation (permutative straddling), then
write the framed payload bits into the planned slots.  Every step is a
pure function of its inputs, so the identical plan can be rebuilt at
extraction time from the stego image and the recorded knobs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from stegattn.errors import CapacityExceededError, CorruptPayloadError, NotStegoError
from stegattn.rng import Xoshiro256StarStar
from stegattn.tensor_core import AttentionMap, ImageTensor

B_MAX_DEFAULT = 4

FRAME_MAGIC = bytes.fromhex("4241534e")
FRAME_VERSION = 1
HEADER_BITS = 32 + 8 + 64


@dataclass(frozen=True)
class CapacityMap:
    """Embeddable bit-plane counts per pixel channel, in [0, b_max]."""

    bits: np.ndarray  # (H, W, C) uint8
    b_max: int = B_MAX_DEFAULT

    def __post_init__(self):
        if self.bits.ndim != 3:
            raise ValueError(f"capacity must be (H, W, C), got {self.bits.shape}")
        if self.bits.max(initial=0) > self.b_max:
            raise ValueError("capacity exceeds b_max")
        self.bits.setflags(write=False)

    @property
    def total_bits(self) -> int:
        return int(self.bits.sum())

    @property
    def bpp(self) -> float:
        h, w = self.bits.shape[:2]
        return self.total_bits / (h * w)


@dataclass(frozen=True)
class EmbeddingPlan:
    """Ordered (row, col, channel, bit_plane) slots after masking/straddling.

    The slot order is a pure function of (capacity, lsm_k, ps_seed,
    ps_limit_bpp); ``ps_unlimited`` flags a straddling budget that exceeded
    the available capacity, in which case every slot is kept.
    """

    slots: np.ndarray  # (N, 4) int32
    lsm_k: int
    ps_seed: int | None = None
    ps_limit_bpp: float | None = None
    ps_unlimited: bool = False

    def __post_init__(self):
        self.slots.setflags(write=False)

    def __len__(self) -> int:
        return self.slots.shape[0]


@dataclass(frozen=True)
class PayloadFrame:
    """Self-describing bit-stream wrapper around the hidden payload.

    Wire layout, most-significant bit first within each byte: 4 magic
    bytes, 1 version byte, big-endian 64-bit body bit count, body bits.
    """

    body: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    version: int = FRAME_VERSION

    def __post_init__(self):
        if self.body.dtype != np.uint8 or self.body.ndim != 1:
            raise ValueError("body must be a 1-D uint8 bit array")
        if self.body.size and self.body.max() > 1:
            raise ValueError("body bits must be 0/1")
        self.body.setflags(write=False)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PayloadFrame":
        return cls(np.unpackbits(np.frombuffer(data, dtype=np.uint8)))

    def body_bytes(self) -> bytes:
        """Body packed MSB-first; a non-byte-multiple tail is zero-padded."""
        return np.packbits(self.body).tobytes()

    def to_bits(self) -> np.ndarray:
        header = FRAME_MAGIC + bytes([self.version]) + int(self.body.size).to_bytes(8, "big")
        return np.concatenate([np.unpackbits(np.frombuffer(header, dtype=np.uint8)), self.body])

    @classmethod
    def decode(cls, bits: np.ndarray) -> "PayloadFrame":
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.size < HEADER_BITS:
            raise NotStegoError(
                f"stream holds {bits.size} bits, shorter than the {HEADER_BITS}-bit header"
            )
        header = np.packbits(bits[:HEADER_BITS]).tobytes()
        if header[:4] != FRAME_MAGIC:
            raise NotStegoError("bad frame magic: not a stego stream or wrong knobs/models")
        version = header[4]
        if version != FRAME_VERSION:
            raise NotStegoError(f"unsupported frame version {version}")
        length = int.from_bytes(header[5:13], "big")
        available = bits.size - HEADER_BITS
        if length > available:
            raise CorruptPayloadError(
                f"header declares {length} body bits but only {available} remain",
                recovered_bits=bits[HEADER_BITS:].copy(),
            )
        return cls(bits[HEADER_BITS : HEADER_BITS + length].copy(), version=version)


def quantize_attention(
    atten: AttentionMap, channels: int = 3, b_max: int = B_MAX_DEFAULT
) -> CapacityMap:
    """Map unit-interval attention to per-channel plane counts.

    n = clamp(floor(a * (b_max + 1)), 0, b_max), replicated across
    channels: piecewise constant with b_max + 1 levels, monotone in the
    attention.
    """
    levels = np.clip(np.floor(atten.values * (b_max + 1)), 0, b_max).astype(np.uint8)
    return CapacityMap(np.repeat(levels[:, :, None], channels, axis=2), b_max=b_max)


def build_plan(
    cap: CapacityMap,
    lsm_k: int = 0,
    ps_seed: int | None = None,
    ps_limit_bpp: float | None = None,
) -> EmbeddingPlan:
    """Enumerate embeddable slots and apply masking/straddling.

    Base order is row-major over pixels, channel next, bit plane ascending
    innermost.  Planes below ``lsm_k`` are excluded (they keep cover bits).
    With ``ps_seed`` the slot order is shuffled by the seeded permutation
    and, when ``ps_limit_bpp`` is given, truncated to
    floor(ps_limit_bpp * H * W) slots.
    """
    if not 0 <= lsm_k < cap.b_max:
        raise ValueError(f"lsm_k must be in [0, {cap.b_max}), got {lsm_k}")
    if ps_limit_bpp is not None:
        if ps_seed is None:
            raise ValueError("ps_limit_bpp requires ps_seed")
        if ps_limit_bpp <= 0:
            raise ValueError(f"ps_limit_bpp must be positive, got {ps_limit_bpp}")

    h, w, c = cap.bits.shape
    flat_bits = cap.bits.reshape(-1).astype(np.int64)  # C-order: row, col, channel
    counts = np.maximum(flat_bits - lsm_k, 0)
    total = int(counts.sum())

    owner = np.repeat(np.arange(h * w * c, dtype=np.int64), counts)
    starts = np.cumsum(counts) - counts
    planes = lsm_k + (np.arange(total, dtype=np.int64) - np.repeat(starts, counts))

    slots = np.empty((total, 4), dtype=np.int32)
    slots[:, 0] = owner // (w * c)
    slots[:, 1] = (owner // c) % w
    slots[:, 2] = owner % c
    slots[:, 3] = planes

    ps_unlimited = False
    if ps_seed is not None:
        perm = Xoshiro256StarStar(ps_seed).permutation(total)
        slots = slots[perm]
        if ps_limit_bpp is not None:
            budget = int(np.floor(ps_limit_bpp * h * w))
            if budget >= total:
                ps_unlimited = True
            else:
                slots = slots[:budget]

    return EmbeddingPlan(
        slots=np.ascontiguousarray(slots),
        lsm_k=lsm_k,
        ps_seed=ps_seed,
        ps_limit_bpp=ps_limit_bpp,
        ps_unlimited=ps_unlimited,
    )


def write_bits(cover: ImageTensor, plan: EmbeddingPlan, bits: np.ndarray) -> ImageTensor:
    """Replace the planned bit planes with ``bits``, in plan order.

    Slots beyond ``len(bits)`` and every bit outside the plan keep their
    cover values.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size > len(plan):
        raise CapacityExceededError(available_bits=len(plan), required_bits=int(bits.size))

    stego = cover.pixels.copy()
    used = plan.slots[: bits.size]
    # One scatter per plane: a byte can host several slots (one per plane),
    # and duplicate indices in a single fancy-index assignment drop writes.
    for plane in np.unique(used[:, 3]):
        sel = used[:, 3] == plane
        rows, cols, chans = used[sel, 0], used[sel, 1], used[sel, 2]
        mask = np.uint8(1 << int(plane))
        current = stego[rows, cols, chans]
        stego[rows, cols, chans] = (current & ~mask) | (bits[sel] << np.uint8(plane))
    return ImageTensor(stego)


def embed(cover: ImageTensor, plan: EmbeddingPlan, frame: PayloadFrame | None) -> ImageTensor:
    """Write the framed payload into the planned slots of a copy of cover.

    ``frame=None`` means no payload at all: the stego image is
    bit-identical to the cover.  Every byte bit outside the written slots
    keeps its cover value, so planes below lsm_k are untouched everywhere.
    """
    if frame is None:
        return ImageTensor(cover.pixels.copy())
    return write_bits(cover, plan, frame.to_bits())


def read_plan_bits(stego: ImageTensor, plan: EmbeddingPlan, limit: int | None = None) -> np.ndarray:
    """Raw bit stream at the plan's slots, in plan order."""
    slots = plan.slots if limit is None else plan.slots[:limit]
    rows, cols, chans, planes = slots[:, 0], slots[:, 1], slots[:, 2], slots[:, 3]
    return ((stego.pixels[rows, cols, chans] >> planes.astype(np.uint8)) & 1).astype(np.uint8)


def extract_with_plan(stego: ImageTensor, plan: EmbeddingPlan) -> PayloadFrame:
    """Decode the frame carried at the plan's slots (oracle mode)."""
    return PayloadFrame.decode(read_plan_bits(stego, plan))


def extract(
    stego: ImageTensor,
    itc_net,
    mfd_net,
    strategy,
    lsm_k: int = 0,
    ps_seed: int | None = None,
    ps_limit_bpp: float | None = None,
    b_max: int = B_MAX_DEFAULT,
) -> PayloadFrame:
    """Recompute the fused attention on the stego image and decode.

    The models must be the checkpoints used at embed time and the knobs
    identical, otherwise the rebuilt plan drifts and the header fails.
    """
    plan = recompute_plan(
        stego, itc_net, mfd_net, strategy, lsm_k=lsm_k, ps_seed=ps_seed,
        ps_limit_bpp=ps_limit_bpp, b_max=b_max,
    )
    return extract_with_plan(stego, plan)


def recompute_plan(
    image: ImageTensor,
    itc_net,
    mfd_net,
    strategy,
    lsm_k: int = 0,
    ps_seed: int | None = None,
    ps_limit_bpp: float | None = None,
    b_max: int = B_MAX_DEFAULT,
) -> EmbeddingPlan:
    """Attention -> fusion -> capacity -> plan, all from the given image."""
    from stegattn.fusion import fuse
    from stegattn.itc import itc_forward
    from stegattn.mfd import mfd_forward

    a_itc = itc_forward(itc_net, image)
    a_mfd = mfd_forward(mfd_net, image)
    fused = fuse(a_itc, a_mfd, strategy)
    cap = quantize_attention(fused, channels=image.channels, b_max=b_max)
    return build_plan(cap, lsm_k=lsm_k, ps_seed=ps_seed, ps_limit_bpp=ps_limit_bpp)


def bser(sent_bits: np.ndarray, received_bits: np.ndarray) -> float:
    """Bit error rate as a percentage of the sent bits.

    Length mismatch counts as that many redundant or missing bits; the
    common prefix contributes its Hamming distance.
    """
    sent = np.asarray(sent_bits, dtype=np.uint8)
    received = np.asarray(received_bits, dtype=np.uint8)
    if sent.size == 0:
        raise ValueError("sent bit stream is empty")
    common = min(sent.size, received.size)
    errors = abs(sent.size - received.size)
    errors += int(np.count_nonzero(sent[:common] != received[:common]))
    return 100.0 * errors / sent.size
