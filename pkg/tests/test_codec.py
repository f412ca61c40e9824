import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stegattn.codec import (
    CapacityMap,
    EmbeddingPlan,
    PayloadFrame,
    bser,
    build_plan,
    embed,
    extract_with_plan,
    quantize_attention,
    read_plan_bits,
    write_bits,
)
from stegattn.errors import CapacityExceededError, CorruptPayloadError, NotStegoError
from stegattn.tensor_core import AttentionMap, ImageTensor


def enumerate_slots_oracle(bits: np.ndarray, lsm_k: int) -> list[tuple[int, int, int, int]]:
    """Nested-loop slot oracle: row-major, channel-minor, plane ascending."""
    h, w, c = bits.shape
    out = []
    for r in range(h):
        for col in range(w):
            for ch in range(c):
                for plane in range(lsm_k, int(bits[r, col, ch])):
                    out.append((r, col, ch, plane))
    return out


def random_image(rng, h=16, w=16, c=3) -> ImageTensor:
    return ImageTensor(rng.integers(0, 256, (h, w, c), dtype=np.uint8))


class TestQuantizeAttention:
    def test_zero_attention_zero_capacity(self):
        cap = quantize_attention(AttentionMap(np.zeros((8, 8))), channels=3)
        assert cap.total_bits == 0
        assert cap.bpp == 0.0

    def test_saturated_attention(self):
        cap = quantize_attention(AttentionMap(np.full((8, 8), 1.0 - 1e-9)), channels=3)
        assert np.all(cap.bits == 4)
        assert cap.bpp == pytest.approx(12.0)

    def test_half_attention_two_bits(self):
        cap = quantize_attention(AttentionMap(np.full((8, 8), 0.5)), channels=3)
        assert np.all(cap.bits == 2)
        assert cap.bpp == pytest.approx(6.0)

    def test_exactly_one_clamped(self):
        cap = quantize_attention(AttentionMap(np.ones((8, 8))), channels=1)
        assert np.all(cap.bits == 4)

    def test_five_levels_only(self):
        rng = np.random.default_rng(0)
        cap = quantize_attention(AttentionMap(rng.random((32, 32))), channels=3)
        assert set(np.unique(cap.bits)) <= {0, 1, 2, 3, 4}

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_capacity_monotone_in_attention(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.random((8, 8))
        bump = rng.random((8, 8)) * (1.0 - a)
        low = quantize_attention(AttentionMap(a), channels=3)
        high = quantize_attention(AttentionMap(a + bump), channels=3)
        assert high.total_bits >= low.total_bits
        assert np.all(high.bits >= low.bits)


class TestBuildPlan:
    def test_no_filtering_keeps_all_slots(self):
        rng = np.random.default_rng(1)
        bits = rng.integers(0, 5, (6, 5, 3)).astype(np.uint8)
        cap = CapacityMap(bits)
        plan = build_plan(cap, lsm_k=0)
        assert len(plan) == cap.total_bits

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(2)
        bits = rng.integers(0, 5, (5, 4, 3)).astype(np.uint8)
        for lsm_k in (0, 1, 2, 3):
            plan = build_plan(CapacityMap(bits), lsm_k=lsm_k)
            expected = enumerate_slots_oracle(bits, lsm_k)
            assert [tuple(s) for s in plan.slots] == expected

    def test_uniform_two_bits_lsm1_halves_slots(self):
        cap = CapacityMap(np.full((8, 8, 3), 2, dtype=np.uint8))
        full = build_plan(cap, lsm_k=0)
        masked = build_plan(cap, lsm_k=1)
        assert len(masked) * 2 == len(full)
        assert np.all(masked.slots[:, 3] >= 1)

    def test_ps_limit_budget(self):
        cap = CapacityMap(np.full((64, 64, 3), 4, dtype=np.uint8))
        limit = 1.2
        plan = build_plan(cap, lsm_k=0, ps_seed=99, ps_limit_bpp=limit)
        budget = int(np.floor(limit * 64 * 64))
        assert budget == 4915
        assert len(plan) == budget
        assert not plan.ps_unlimited

    def test_ps_limit_above_capacity_flags_unlimited(self):
        cap = CapacityMap(np.full((8, 8, 1), 1, dtype=np.uint8))
        plan = build_plan(cap, lsm_k=0, ps_seed=7, ps_limit_bpp=50.0)
        assert plan.ps_unlimited
        assert len(plan) == cap.total_bits

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 5, (10, 10, 3)).astype(np.uint8)
        cap = CapacityMap(bits)
        p1 = build_plan(cap, lsm_k=1, ps_seed=1234, ps_limit_bpp=2.0)
        p2 = build_plan(cap, lsm_k=1, ps_seed=1234, ps_limit_bpp=2.0)
        assert np.array_equal(p1.slots, p2.slots)

    def test_shuffle_is_permutation_of_base_slots(self):
        rng = np.random.default_rng(4)
        bits = rng.integers(0, 5, (6, 6, 3)).astype(np.uint8)
        cap = CapacityMap(bits)
        base = build_plan(cap, lsm_k=1)
        shuffled = build_plan(cap, lsm_k=1, ps_seed=42)
        assert len(base) == len(shuffled)
        base_set = {tuple(s) for s in base.slots}
        shuf_set = {tuple(s) for s in shuffled.slots}
        assert base_set == shuf_set
        assert not np.array_equal(base.slots, shuffled.slots)

    def test_lsm_k_out_of_range(self):
        cap = CapacityMap(np.full((8, 8, 3), 4, dtype=np.uint8))
        with pytest.raises(ValueError):
            build_plan(cap, lsm_k=4)
        with pytest.raises(ValueError):
            build_plan(cap, lsm_k=-1)

    def test_ps_limit_without_seed_rejected(self):
        cap = CapacityMap(np.full((8, 8, 3), 2, dtype=np.uint8))
        with pytest.raises(ValueError):
            build_plan(cap, lsm_k=0, ps_limit_bpp=1.0)


class TestWriteAndEmbed:
    def test_single_bit_plane0_arithmetic(self):
        pixels = np.zeros((8, 8, 3), dtype=np.uint8)
        pixels[0, 0, 0] = 0b10110010
        cover = ImageTensor(pixels)
        plan = EmbeddingPlan(slots=np.array([[0, 0, 0, 0]], dtype=np.int32), lsm_k=0)
        stego = write_bits(cover, plan, np.array([1], dtype=np.uint8))
        assert stego.pixels[0, 0, 0] == 0b10110011
        untouched = stego.pixels.copy()
        untouched[0, 0, 0] = pixels[0, 0, 0]
        assert np.array_equal(untouched, pixels)

    def test_clearing_a_set_bit(self):
        pixels = np.full((8, 8, 1), 0b10110011, dtype=np.uint8)
        cover = ImageTensor(pixels)
        plan = EmbeddingPlan(slots=np.array([[0, 0, 0, 1]], dtype=np.int32), lsm_k=0)
        stego = write_bits(cover, plan, np.array([0], dtype=np.uint8))
        assert stego.pixels[0, 0, 0] == 0b10110001

    def test_empty_payload_identity(self):
        rng = np.random.default_rng(5)
        cover = random_image(rng)
        cap = quantize_attention(AttentionMap(rng.random((16, 16))), channels=3)
        plan = build_plan(cap)
        stego = embed(cover, plan, None)
        assert np.array_equal(stego.pixels, cover.pixels)

    def test_full_capacity_distortion_bound(self):
        rng = np.random.default_rng(6)
        cover = random_image(rng, 16, 16, 3)
        cap = CapacityMap(np.full((16, 16, 3), 4, dtype=np.uint8))
        plan = build_plan(cap)
        bits = rng.integers(0, 2, len(plan)).astype(np.uint8)
        stego = write_bits(cover, plan, bits)
        diff = np.abs(stego.pixels.astype(np.int16) - cover.pixels.astype(np.int16))
        assert diff.max() <= 2**4 - 1

    def test_payload_overflow_reports_both_sizes(self):
        rng = np.random.default_rng(7)
        cover = random_image(rng, 8, 8, 1)
        cap = CapacityMap(np.full((8, 8, 1), 1, dtype=np.uint8))
        plan = build_plan(cap)  # 64 slots, header alone needs 104
        frame = PayloadFrame.from_bytes(b"x")
        with pytest.raises(CapacityExceededError) as exc:
            embed(cover, plan, frame)
        assert exc.value.available_bits == 64
        assert exc.value.required_bits == 104 + 8


class TestRoundTrip:
    def run_case(self, rng, lsm_k, use_ps):
        h, w = int(rng.integers(8, 33)), int(rng.integers(8, 33))
        c = int(rng.choice([1, 3]))
        cover = random_image(rng, h, w, c)
        atten = AttentionMap(rng.random((h, w)))
        cap = quantize_attention(atten, channels=c)
        ps_seed = int(rng.integers(0, 2**63)) if use_ps else None
        ps_limit = float(rng.uniform(0.5, 3.0)) if use_ps and rng.random() < 0.5 else None
        plan = build_plan(cap, lsm_k=lsm_k, ps_seed=ps_seed, ps_limit_bpp=ps_limit)
        budget = len(plan) - 104
        if budget < 8:
            return None
        n_bytes = int(rng.integers(1, budget // 8 + 1))
        payload = rng.integers(0, 256, n_bytes, dtype=np.uint8).tobytes()
        frame = PayloadFrame.from_bytes(payload)
        stego = embed(cover, plan, frame)
        got = extract_with_plan(stego, plan)
        return payload, frame, got

    def test_oracle_plan_round_trip_exact(self):
        rng = np.random.default_rng(8)
        ran = 0
        for _ in range(60):
            lsm_k = int(rng.integers(0, 4))
            out = self.run_case(rng, lsm_k, use_ps=bool(rng.integers(0, 2)))
            if out is None:
                continue
            payload, frame, got = out
            assert np.array_equal(got.body, frame.body)
            assert got.body_bytes() == payload
            assert bser(frame.body, got.body) == 0.0
            ran += 1
        assert ran >= 40

    def test_lsm_restoration_exhaustive(self):
        rng = np.random.default_rng(9)
        for lsm_k in (1, 2):
            cover = random_image(rng, 24, 24, 3)
            cap = quantize_attention(AttentionMap(rng.random((24, 24))), channels=3)
            plan = build_plan(cap, lsm_k=lsm_k)
            bits = rng.integers(0, 2, len(plan)).astype(np.uint8)
            stego = write_bits(cover, plan, bits)
            mask = np.uint8((1 << lsm_k) - 1)
            assert np.array_equal(stego.pixels & mask, cover.pixels & mask)

    def test_ps_budget_respected(self):
        rng = np.random.default_rng(10)
        for limit in (0.6, 0.8, 1.2):
            cover = random_image(rng, 32, 32, 3)
            cap = quantize_attention(AttentionMap(rng.random((32, 32))), channels=3)
            plan = build_plan(cap, lsm_k=1, ps_seed=77, ps_limit_bpp=limit)
            measured_bpp = len(plan) / (32 * 32)
            assert measured_bpp <= limit

    def test_wrong_ps_seed_fails_header(self):
        rng = np.random.default_rng(11)
        cover = random_image(rng, 32, 32, 3)
        cap = quantize_attention(AttentionMap(rng.random((32, 32)) * 0.9 + 0.1), channels=3)
        good_seed = 123456789
        plan = build_plan(cap, lsm_k=0, ps_seed=good_seed)
        payload = rng.integers(0, 256, 128, dtype=np.uint8).tobytes()
        stego = embed(cover, plan, PayloadFrame.from_bytes(payload))
        for wrong_seed in range(100):
            if wrong_seed == good_seed:
                continue
            bad_plan = build_plan(cap, lsm_k=0, ps_seed=wrong_seed)
            with pytest.raises(NotStegoError):
                extract_with_plan(stego, bad_plan)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.booleans())
    def test_round_trip_property(self, seed, lsm_k, use_ps):
        rng = np.random.default_rng(seed)
        out = self.run_case(rng, lsm_k, use_ps)
        if out is None:
            return
        payload, frame, got = out
        assert np.array_equal(got.body, frame.body)


class TestPayloadFrame:
    def test_round_trip_bytes(self):
        frame = PayloadFrame.from_bytes(b"hello world")
        decoded = PayloadFrame.decode(frame.to_bits())
        assert decoded.body_bytes() == b"hello world"

    def test_empty_body_round_trip(self):
        frame = PayloadFrame.from_bytes(b"")
        decoded = PayloadFrame.decode(frame.to_bits())
        assert decoded.body.size == 0

    @settings(max_examples=40, deadline=None)
    @given(st.binary(min_size=0, max_size=256))
    def test_round_trip_property(self, data):
        frame = PayloadFrame.from_bytes(data)
        assert PayloadFrame.decode(frame.to_bits()).body_bytes() == data

    def test_bit_level_round_trip_non_byte_multiple(self):
        bits = np.array([1, 0, 1, 1, 0], dtype=np.uint8)
        frame = PayloadFrame(bits)
        decoded = PayloadFrame.decode(frame.to_bits())
        assert np.array_equal(decoded.body, bits)

    def test_header_layout(self):
        frame = PayloadFrame.from_bytes(b"\xff")
        header = np.packbits(frame.to_bits()[:104]).tobytes()
        assert header[:4] == bytes.fromhex("4241534e")
        assert header[4] == 1
        assert int.from_bytes(header[5:13], "big") == 8

    def test_bad_magic_raises(self):
        frame = PayloadFrame.from_bytes(b"abc")
        bits = frame.to_bits().copy()
        bits[0] ^= 1
        with pytest.raises(NotStegoError):
            PayloadFrame.decode(bits)

    def test_bad_version_raises(self):
        frame = PayloadFrame.from_bytes(b"abc")
        bits = frame.to_bits().copy()
        bits[39] ^= 1  # lowest version bit
        with pytest.raises(NotStegoError):
            PayloadFrame.decode(bits)

    def test_short_stream_raises(self):
        with pytest.raises(NotStegoError):
            PayloadFrame.decode(np.zeros(50, dtype=np.uint8))

    def test_truncated_body_recovers_prefix(self):
        frame = PayloadFrame.from_bytes(b"abcdef")
        bits = frame.to_bits()[: 104 + 20]
        with pytest.raises(CorruptPayloadError) as exc:
            PayloadFrame.decode(bits)
        assert np.array_equal(exc.value.recovered_bits, frame.body[:20])


class TestBser:
    def test_identical_streams(self):
        bits = np.random.default_rng(0).integers(0, 2, 500).astype(np.uint8)
        assert bser(bits, bits) == 0.0

    def test_missing_tail(self):
        sent = np.zeros(1000, dtype=np.uint8)
        assert bser(sent, sent[:990]) == pytest.approx(1.0)

    def test_spurious_tail(self):
        sent = np.zeros(500, dtype=np.uint8)
        received = np.zeros(505, dtype=np.uint8)
        assert bser(sent, received) == pytest.approx(1.0)

    def test_flipped_bits(self):
        sent = np.zeros(200, dtype=np.uint8)
        received = sent.copy()
        received[:10] = 1
        assert bser(sent, received) == pytest.approx(5.0)

    def test_empty_sent_rejected(self):
        with pytest.raises(ValueError):
            bser(np.zeros(0, dtype=np.uint8), np.zeros(4, dtype=np.uint8))

    def test_read_plan_bits_matches_written(self):
        rng = np.random.default_rng(12)
        cover = random_image(rng)
        cap = quantize_attention(AttentionMap(rng.random((16, 16))), channels=3)
        plan = build_plan(cap, lsm_k=1, ps_seed=5)
        bits = rng.integers(0, 2, len(plan)).astype(np.uint8)
        stego = write_bits(cover, plan, bits)
        assert np.array_equal(read_plan_bits(stego, plan), bits)
