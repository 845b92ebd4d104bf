import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamrec import numerics as nn
from streamrec.encoder import EncoderConfig, SharedEncoder, causal_conv
from streamrec.numerics import Tensor


def small_encoder(seed=0, **overrides):
    defaults = dict(layers=2, heads=2, d_model=16, d_ff=32, conv_kernel=4, feature_dim=8)
    defaults.update(overrides)
    cfg = EncoderConfig(**defaults)
    return SharedEncoder(cfg, np.random.default_rng(seed))


def encode_incremental(enc, frames, chunk_size):
    cache = enc.new_cache()
    outs = []
    total = frames.shape[0]
    for lo in range(0, total, chunk_size):
        piece = Tensor(frames.data[lo : lo + chunk_size])
        states, cache = enc.encode_chunk(piece, cache)
        outs.append(states.data)
    return np.concatenate(outs, axis=0), cache


class TestSubsample:
    def test_length_formula_67(self):
        # floor-division through two valid 3-wide stride-2 convolutions
        enc = small_encoder()
        out = enc.subsample(np.random.default_rng(0).standard_normal((67, 8)))
        assert out.shape == (16, 16)

    def test_minimal_input(self):
        enc = small_encoder()
        out = enc.subsample(np.random.default_rng(0).standard_normal((7, 8)))
        assert out.shape == (1, 16)

    def test_below_minimum(self):
        enc = small_encoder()
        with pytest.raises(ValueError, match="insufficient frames"):
            enc.subsample(np.zeros((6, 8)))

    def test_deterministic(self):
        enc = small_encoder()
        feats = np.random.default_rng(1).standard_normal((30, 8))
        a = enc.subsample(feats).data
        b = enc.subsample(feats).data
        assert a.tobytes() == b.tobytes()

    @given(raw=st.integers(min_value=7, max_value=200))
    @settings(max_examples=30, deadline=None)
    def test_length_matches_config_formula(self, raw):
        cfg = EncoderConfig(layers=1, heads=2, d_model=8, d_ff=16, conv_kernel=2, feature_dim=8)
        enc = SharedEncoder(cfg, np.random.default_rng(2))
        out = enc.subsample(np.zeros((raw, 8)))
        inner = (raw - 1) // 2  # after first conv: floor((raw-3)/2)+1
        assert out.shape[0] == cfg.subsampled_length(raw) == (inner - 1) // 2

    def test_wrong_feature_dim(self):
        enc = small_encoder()
        with pytest.raises(ValueError):
            enc.subsample(np.zeros((20, 5)))


class TestCausalConv:
    def test_kernel_one_is_pointwise(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((6, 4)))
        w = Tensor(rng.standard_normal((1, 4)))
        y, tail = causal_conv(x, w, np.zeros((0, 4)))
        assert np.allclose(y.data, x.data * w.data[0])
        assert tail.shape == (0, 4)

    def test_identity_kernel(self):
        # last tap 1, earlier taps 0 -> output equals input
        w = np.zeros((4, 5))
        w[-1, :] = 1.0
        x = Tensor(np.random.default_rng(4).standard_normal((7, 5)))
        y, _ = causal_conv(x, Tensor(w), np.zeros((3, 5)))
        assert np.allclose(y.data, x.data)

    def test_chunked_equals_one_shot(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((8, 3))
        w = Tensor(rng.standard_normal((5, 3)))
        full, _ = causal_conv(Tensor(x), w, np.zeros((4, 3)))
        first, tail = causal_conv(Tensor(x[:4]), w, np.zeros((4, 3)))
        second, _ = causal_conv(Tensor(x[4:]), w, tail)
        joined = np.concatenate([first.data, second.data], axis=0)
        assert np.abs(joined - full.data).max() <= 1e-9

    def test_wrong_tail_length(self):
        x = Tensor(np.zeros((4, 3)))
        w = Tensor(np.zeros((5, 3)))
        with pytest.raises(ValueError, match="cache shape mismatch"):
            causal_conv(x, w, np.zeros((2, 3)))

    def test_output_is_causal(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((10, 3))
        w = Tensor(rng.standard_normal((3, 3)))
        base, _ = causal_conv(Tensor(x), w, np.zeros((2, 3)))
        bumped = x.copy()
        bumped[7] += 10.0
        after, _ = causal_conv(Tensor(bumped), w, np.zeros((2, 3)))
        assert np.array_equal(base.data[:7], after.data[:7])
        assert not np.allclose(base.data[7:], after.data[7:])


class TestEncodeFull:
    def test_oversized_chunk_equals_unmasked(self):
        enc = small_encoder(seed=7)
        frames = enc.subsample(np.random.default_rng(7).standard_normal((43, 8)))
        t = frames.shape[0]
        big = enc.encode_full(frames, t).data
        bigger = enc.encode_full(frames, 10 * t).data
        assert np.array_equal(big, bigger)

    def test_single_frame_ignores_chunk_size(self):
        enc = small_encoder(seed=8)
        frames = enc.subsample(np.random.default_rng(8).standard_normal((7, 8)))
        a = enc.encode_full(frames, 1).data
        b = enc.encode_full(frames, 5).data
        assert np.array_equal(a, b)

    def test_invalid_chunk(self):
        enc = small_encoder()
        frames = enc.subsample(np.zeros((20, 8)))
        with pytest.raises(ValueError):
            enc.encode_full(frames, 0)


class TestStreamingEquivalence:
    @pytest.mark.parametrize("chunk", [1, 2, 4, 8, 16])
    def test_matches_full_encoding(self, chunk):
        enc = small_encoder(seed=chunk)
        rng = np.random.default_rng(chunk + 100)
        feats = rng.standard_normal((int(rng.integers(20, 120)), 8))
        with nn.no_grad():
            frames = enc.subsample(feats)
            full = enc.encode_full(frames, chunk).data
            inc, cache = encode_incremental(enc, frames, chunk)
        assert np.abs(full - inc).max() <= 1e-9
        assert cache.consumed_frames == frames.shape[0]

    def test_first_chunk_equals_full_on_prefix(self):
        enc = small_encoder(seed=20)
        rng = np.random.default_rng(20)
        frames = enc.subsample(rng.standard_normal((67, 8)))
        chunk = Tensor(frames.data[:4])
        states, _ = enc.encode_chunk(chunk, enc.new_cache())
        prefix_full = enc.encode_full(Tensor(frames.data[:4]), 4).data
        assert np.abs(states.data - prefix_full).max() <= 1e-12

    def test_second_chunk_matches_full_rows(self):
        enc = small_encoder(seed=21)
        rng = np.random.default_rng(21)
        frames = enc.subsample(rng.standard_normal((35, 8)))  # 8 frames
        full = enc.encode_full(frames, 4).data
        cache = enc.new_cache()
        _, cache = enc.encode_chunk(Tensor(frames.data[:4]), cache)
        second, _ = enc.encode_chunk(Tensor(frames.data[4:8]), cache)
        assert np.abs(second.data - full[4:8]).max() <= 1e-9

    def test_final_partial_chunk(self):
        enc = small_encoder(seed=22)
        rng = np.random.default_rng(22)
        feats = rng.standard_normal((4 * (2 * 5 + 3) + 3, 8))  # T = 2C + 3 with C=5
        frames = enc.subsample(feats)
        assert frames.shape[0] == 13
        full = enc.encode_full(frames, 5).data
        inc, _ = encode_incremental(enc, frames, 5)
        assert np.abs(full - inc).max() <= 1e-9

    def test_cache_config_mismatch(self):
        enc = small_encoder(seed=23)
        other = small_encoder(seed=23, conv_kernel=2)
        frames = enc.subsample(np.zeros((20, 8)))
        with pytest.raises(ValueError, match="cache/config mismatch"):
            enc.encode_chunk(Tensor(frames.data[:2]), other.new_cache())


class TestCausality:
    def test_future_chunk_perturbation_invisible(self):
        enc = small_encoder(seed=30)
        rng = np.random.default_rng(30)
        frames = rng.standard_normal((12, 16))
        chunk = 4
        base = enc.encode_full(Tensor(frames), chunk).data
        bumped = frames.copy()
        bumped[9] += 5.0  # frame in the last chunk
        after = enc.encode_full(Tensor(bumped), chunk).data
        assert np.array_equal(base[:8], after[:8])  # earlier chunks untouched

    def test_receptive_field_stops_at_chunk_end(self):
        enc = small_encoder(seed=31)
        rng = np.random.default_rng(31)
        frames = rng.standard_normal((12, 16))
        chunk = 4
        base = enc.encode_full(Tensor(frames), chunk).data
        zeroed = frames.copy()
        zeroed[8:] = 0.0  # wipe everything after frame 7's chunk end
        after = enc.encode_full(Tensor(zeroed), chunk).data
        assert np.array_equal(base[:8], after[:8])


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EncoderConfig(heads=3, d_model=16)
        with pytest.raises(ValueError):
            EncoderConfig(conv_kernel=0)
        with pytest.raises(ValueError):
            EncoderConfig(feature_dim=4)

    def test_parameters_are_named_and_unique(self):
        enc = small_encoder()
        params = enc.parameters()
        assert len(params) == len(set(params))
        assert any(name.endswith("conv_dw") for name in params)
