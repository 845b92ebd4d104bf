"""The shared encoder: 4x convolutional subsampling followed by a stack of
conformer-lite blocks (half-step feed-forwards, chunk-masked self-attention,
causal depthwise convolution), runnable one-shot or chunk by chunk.

Incremental encoding keeps, per layer, the frames previously offered as
attention keys/values plus the causal-convolution tail, so chunked outputs
match a full-sequence pass bit-for-bit in exact arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nn
from .layers import FeedForward, Linear, LayerNorm, MultiHeadAttention, TrainContext, dropout, sinusoid_positions
from .masking import make_chunk_mask
from .numerics import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    conv_kernel: int = 8
    feature_dim: int = 8

    SUBSAMPLE_KERNEL = 3
    SUBSAMPLE_STRIDE = 2
    MIN_INPUT_FRAMES = 7  # two valid 3-wide stride-2 convolutions

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.conv_kernel < 1:
            raise ValueError("conv_kernel must be >= 1")
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.feature_dim < self.MIN_INPUT_FRAMES:
            raise ValueError("feature_dim must allow two 3-wide stride-2 convolutions")

    def subsampled_length(self, raw_frames: int) -> int:
        if raw_frames < self.MIN_INPUT_FRAMES:
            raise ValueError("insufficient frames")
        k, s = self.SUBSAMPLE_KERNEL, self.SUBSAMPLE_STRIDE
        t = (raw_frames - k) // s + 1
        return (t - k) // s + 1


def causal_conv(x: Tensor, weights: Tensor, tail: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Depthwise causal convolution with explicit streaming state.

    ``tail`` holds the kernel-1 frames preceding ``x`` (zeros at stream
    start); the returned tail is ready for the next chunk.
    """
    kernel = weights.shape[0]
    expect = (kernel - 1, x.shape[-1])
    tail = np.asarray(tail, dtype=np.float64)
    if tail.shape != expect:
        raise ValueError("cache shape mismatch")
    y = nn.depthwise_conv1d(x, weights, tail)
    if kernel == 1:
        new_tail = np.zeros((0, x.shape[-1]))
    else:
        joined = np.concatenate([tail, x.data], axis=0)
        new_tail = joined[-(kernel - 1):].copy()
    return y, new_tail


class ConformerLiteLayer:
    """Half-step FF, chunk-masked self-attention, causal conv module, half-step FF."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.cfg = cfg
        self.ln_ff1 = LayerNorm(d)
        self.ff1 = FeedForward(d, cfg.d_ff, rng)
        self.ln_attn = LayerNorm(d)
        self.attn = MultiHeadAttention(d, cfg.heads, rng)
        self.ln_conv = LayerNorm(d)
        self.conv_in = Linear(d, 2 * d, rng)
        self.conv_dw = nn.param(rng.standard_normal((cfg.conv_kernel, d)) / np.sqrt(cfg.conv_kernel))
        self.conv_out = Linear(d, d, rng)
        self.ln_ff2 = LayerNorm(d)
        self.ff2 = FeedForward(d, cfg.d_ff, rng)
        self.ln_out = LayerNorm(d)

    def forward(
        self,
        x: Tensor,
        mask: np.ndarray | None = None,
        kv_history: np.ndarray | None = None,
        conv_tail: np.ndarray | None = None,
        ctx: TrainContext | None = None,
    ) -> tuple[Tensor, np.ndarray, np.ndarray]:
        """One block over ``x``; returns (output, attention-history piece, conv tail).

        Full-sequence mode passes ``mask`` and no caches; streaming mode
        passes the per-layer caches and no mask (a whole chunk sees all of
        history plus itself, which is exactly the chunk-mask row).
        """
        d = self.cfg.d_model
        x = nn.add(x, nn.scale(dropout(self.ff1(self.ln_ff1(x), ctx), ctx), 0.5))

        history_piece = x.data.copy()
        q_src = self.ln_attn(x)
        if kv_history is not None and kv_history.shape[0] > 0:
            kv_src = self.ln_attn(nn.concat([Tensor(kv_history), x], axis=0))
        else:
            kv_src = q_src
        x = nn.add(x, dropout(self.attn(q_src, kv_src, mask, ctx), ctx))

        if conv_tail is None:
            conv_tail = np.zeros((self.cfg.conv_kernel - 1, d))
        u = nn.glu(self.conv_in(self.ln_conv(x)))
        c, new_tail = causal_conv(u, self.conv_dw, conv_tail)
        c = self.conv_out(nn.gelu(c))
        x = nn.add(x, dropout(c, ctx))

        x = nn.add(x, nn.scale(dropout(self.ff2(self.ln_ff2(x), ctx), ctx), 0.5))
        return self.ln_out(x), history_piece, new_tail

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.ln_ff1.parameters(f"{prefix}.ln_ff1"))
        params.update(self.ff1.parameters(f"{prefix}.ff1"))
        params.update(self.ln_attn.parameters(f"{prefix}.ln_attn"))
        params.update(self.attn.parameters(f"{prefix}.attn"))
        params.update(self.ln_conv.parameters(f"{prefix}.ln_conv"))
        params.update(self.conv_in.parameters(f"{prefix}.conv_in"))
        params[f"{prefix}.conv_dw"] = self.conv_dw
        params.update(self.conv_out.parameters(f"{prefix}.conv_out"))
        params.update(self.ln_ff2.parameters(f"{prefix}.ln_ff2"))
        params.update(self.ff2.parameters(f"{prefix}.ff2"))
        params.update(self.ln_out.parameters(f"{prefix}.ln_out"))
        return params


@dataclass
class EncoderCache:
    """Per-session streaming state: everything a later chunk needs to attend
    and convolve as if the whole stream had been encoded at once."""

    config_key: tuple
    consumed_frames: int = 0
    attn_history: list[np.ndarray] = field(default_factory=list)
    conv_tails: list[np.ndarray] = field(default_factory=list)


class SharedEncoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        k = cfg.SUBSAMPLE_KERNEL
        self.sub_w1 = nn.param(rng.standard_normal((d, 1, k, k)) / np.sqrt(k * k))
        self.sub_b1 = nn.param(np.zeros(d))
        self.sub_w2 = nn.param(rng.standard_normal((d, d, k, k)) / np.sqrt(d * k * k))
        self.sub_b2 = nn.param(np.zeros(d))
        # frequency axis shrinks by the same two stride-2 convolutions
        f = cfg.feature_dim
        f = (f - k) // cfg.SUBSAMPLE_STRIDE + 1
        f = (f - k) // cfg.SUBSAMPLE_STRIDE + 1
        self._freq_out = f
        self.sub_proj = Linear(d * f, d, rng)
        self.layers = [ConformerLiteLayer(cfg, rng) for _ in range(cfg.layers)]

    def _config_key(self) -> tuple:
        c = self.cfg
        return (c.layers, c.heads, c.d_model, c.d_ff, c.conv_kernel, c.feature_dim)

    def subsample(self, features: np.ndarray | Tensor, ctx: TrainContext | None = None) -> Tensor:
        """Two 3x3 stride-2 convolutions (4x in time) projected to d_model."""
        feats = features if isinstance(features, Tensor) else Tensor(features)
        t0, f = feats.shape
        if f != self.cfg.feature_dim:
            raise ValueError(f"expected feature dim {self.cfg.feature_dim}, got {f}")
        if t0 < self.cfg.MIN_INPUT_FRAMES:
            raise ValueError("insufficient frames")
        x = nn.reshape(feats, (1, t0, f))
        x = nn.relu(nn.conv2d(x, self.sub_w1, self.sub_b1, stride=2))
        x = nn.relu(nn.conv2d(x, self.sub_w2, self.sub_b2, stride=2))
        d, t, fo = x.shape
        x = nn.reshape(nn.transpose(x, (1, 0, 2)), (t, d * fo))
        return self.sub_proj(x)

    def encode_full(self, frames: Tensor, chunk_size: int, ctx: TrainContext | None = None) -> Tensor:
        """Encode a whole utterance with the chunk mask applied in every layer."""
        if chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        t = frames.shape[0]
        mask = make_chunk_mask(t, chunk_size)
        x = nn.add(frames, Tensor(sinusoid_positions(0, t, self.cfg.d_model)))
        for layer in self.layers:
            x, _, _ = layer.forward(x, mask=mask, ctx=ctx)
        return x

    def new_cache(self) -> EncoderCache:
        d, k = self.cfg.d_model, self.cfg.conv_kernel
        return EncoderCache(
            config_key=self._config_key(),
            attn_history=[np.zeros((0, d)) for _ in self.layers],
            conv_tails=[np.zeros((k - 1, d)) for _ in self.layers],
        )

    def encode_chunk(self, chunk: Tensor, cache: EncoderCache) -> tuple[Tensor, EncoderCache]:
        """Encode one aligned chunk of subsampled frames, extending the cache.

        The states returned for these frames equal the corresponding rows of
        ``encode_full`` over the whole stream with the same chunk size.
        """
        if cache.config_key != self._config_key():
            raise ValueError("cache/config mismatch")
        c = chunk.shape[0]
        with nn.no_grad():
            x = nn.add(chunk, Tensor(sinusoid_positions(cache.consumed_frames, c, self.cfg.d_model)))
            for i, layer in enumerate(self.layers):
                x, piece, tail = layer.forward(
                    x,
                    kv_history=cache.attn_history[i],
                    conv_tail=cache.conv_tails[i],
                )
                cache.attn_history[i] = np.concatenate([cache.attn_history[i], piece], axis=0)
                cache.conv_tails[i] = tail
        cache.consumed_frames += c
        return x, cache

    def parameters(self, prefix: str = "encoder") -> dict[str, Tensor]:
        params = {
            f"{prefix}.sub.w1": self.sub_w1,
            f"{prefix}.sub.b1": self.sub_b1,
            f"{prefix}.sub.w2": self.sub_w2,
            f"{prefix}.sub.b2": self.sub_b2,
        }
        params.update(self.sub_proj.parameters(f"{prefix}.sub.proj"))
        for i, layer in enumerate(self.layers):
            params.update(layer.parameters(f"{prefix}.layers.{i}"))
        return params
