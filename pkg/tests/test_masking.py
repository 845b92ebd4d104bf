import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from streamrec.masking import ChunkPolicy, latency_bounds, make_chunk_mask, sample_chunk_size


class TestMakeChunkMask:
    def test_two_chunks_of_two(self):
        mask = make_chunk_mask(4, 2)
        expected = np.array(
            [
                [1, 1, 0, 0],
                [1, 1, 0, 0],
                [1, 1, 1, 1],
                [1, 1, 1, 1],
            ],
            dtype=bool,
        )
        assert np.array_equal(mask, expected)

    def test_single_chunk_is_full_attention(self):
        assert make_chunk_mask(3, 3).all()

    def test_chunk_one_is_left_attention(self):
        mask = make_chunk_mask(3, 1)
        assert np.array_equal(mask, np.tril(np.ones((3, 3), dtype=bool)))

    def test_oversized_chunk_equals_full(self):
        assert np.array_equal(make_chunk_mask(5, 99), np.ones((5, 5), dtype=bool))

    @pytest.mark.parametrize("frames,chunk", [(0, 1), (4, 0), (-1, 2), (3, -3)])
    def test_invalid_sizes(self, frames, chunk):
        with pytest.raises(ValueError, match="invalid mask size"):
            make_chunk_mask(frames, chunk)

    def test_diagonal_always_true(self):
        for frames in range(1, 12):
            for chunk in range(1, frames + 2):
                assert make_chunk_mask(frames, chunk).diagonal().all()

    @given(
        frames=st.integers(min_value=1, max_value=32),
        base=st.integers(min_value=1, max_value=16),
        factor=st.integers(min_value=1, max_value=8),
    )
    def test_monotone_for_aligned_chunk_sizes(self, frames, base, factor):
        # inclusion holds when the larger chunk is a multiple of the smaller
        # (aligned boundaries); misaligned pairs can cut within-chunk context
        small = make_chunk_mask(frames, base)
        large = make_chunk_mask(frames, base * factor)
        assert (small <= large).all()

    def test_left_attention_is_minimal_and_full_cover_maximal(self):
        for frames in range(1, 12):
            tri = make_chunk_mask(frames, 1)
            for chunk in range(1, 20):
                mask = make_chunk_mask(frames, chunk)
                assert (tri <= mask).all()
                if chunk >= frames:
                    assert mask.all()


class TestSampleChunkSize:
    def test_full_branch(self):
        policy = ChunkPolicy.dynamic()
        assert sample_chunk_size(100, policy, u=0.7, v=0.3) == 100

    def test_streaming_branch_range(self):
        policy = ChunkPolicy.dynamic()
        seen = {sample_chunk_size(100, policy, u=0.3, v=v) for v in np.linspace(0, 0.9999, 400)}
        assert min(seen) == 1 and max(seen) == 25

    def test_short_utterance_caps_span(self):
        policy = ChunkPolicy.dynamic()
        seen = {sample_chunk_size(10, policy, u=0.3, v=v) for v in np.linspace(0, 0.9999, 200)}
        assert seen == set(range(1, 10))

    def test_boundary_goes_to_streaming(self):
        # u == 0.5 takes the streaming branch
        assert sample_chunk_size(100, ChunkPolicy.dynamic(), u=0.5, v=0.0) == 1

    def test_static_and_full_modes(self):
        assert sample_chunk_size(40, ChunkPolicy.static(6), u=0.9, v=0.1) == 6
        assert sample_chunk_size(40, ChunkPolicy.full(), u=0.1, v=0.1) == 40

    def test_too_short_for_dynamic(self):
        with pytest.raises(ValueError, match="utterance too short"):
            sample_chunk_size(1, ChunkPolicy.dynamic(), u=0.2, v=0.2)

    def test_distribution(self):
        # 10k draws: about half full, the rest uniform on [1, 25]
        rng = np.random.default_rng(42)
        policy = ChunkPolicy.dynamic()
        draws = [sample_chunk_size(100, policy, rng.random(), rng.random()) for _ in range(10_000)]
        full = sum(1 for d in draws if d == 100)
        assert 0.47 <= full / len(draws) <= 0.53
        streaming = [d for d in draws if d != 100]
        counts = np.bincount(streaming, minlength=26)[1:26]
        assert stats.chisquare(counts).pvalue >= 0.01


class TestLatencyBounds:
    def test_reference_point(self):
        assert latency_bounds(16, 4, 10) == (640.0, 320.0)

    def test_small_chunks(self):
        assert latency_bounds(1, 4, 10) == (40.0, 20.0)
        assert latency_bounds(8, 4, 10) == (320.0, 160.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            latency_bounds(0, 4, 10)


class TestChunkPolicy:
    def test_validation(self):
        with pytest.raises(ValueError):
            ChunkPolicy(mode="static")
        with pytest.raises(ValueError):
            ChunkPolicy(mode="bogus")
        with pytest.raises(ValueError):
            ChunkPolicy(mode="dynamic", cap=0)
        with pytest.raises(ValueError):
            ChunkPolicy(mode="dynamic", full_fraction=1.5)
