"""Assembly of the two-pass model: shared encoder, CTC projection head, and
attention decoder, with a flat named-parameter view for the optimizer and
checkpoints.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nn
from .aed import AttentionDecoder, DecoderConfig
from .encoder import EncoderConfig, SharedEncoder
from .layers import Linear, TrainContext
from .numerics import Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Sizes for the whole recognizer.

    ``vocab_size`` counts everything: blank (0), payload tokens
    (1..vocab_size-2), and the shared sos/eos id (vocab_size-1).
    """

    vocab_size: int
    feature_dim: int = 8
    enc_layers: int = 4
    enc_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    conv_kernel: int = 8
    dec_layers: int = 2
    dec_heads: int = 4
    dec_d_ff: int = 256

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            layers=self.enc_layers,
            heads=self.enc_heads,
            d_model=self.d_model,
            d_ff=self.d_ff,
            conv_kernel=self.conv_kernel,
            feature_dim=self.feature_dim,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            vocab=self.vocab_size,
            layers=self.dec_layers,
            heads=self.dec_heads,
            d_model=self.d_model,
            d_ff=self.dec_d_ff,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class TwoPassModel:
    """Shared encoder + streaming CTC head + full-context attention decoder."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.encoder = SharedEncoder(config.encoder_config(), rng)
        self.ctc_head = Linear(config.d_model, config.vocab_size, rng)
        self.decoder = AttentionDecoder(config.decoder_config(), rng)

    @property
    def blank(self) -> int:
        return 0

    @property
    def sos(self) -> int:
        return self.config.vocab_size - 1

    @property
    def eos(self) -> int:
        return self.config.vocab_size - 1

    def parameters(self) -> dict[str, Tensor]:
        params = self.encoder.parameters("encoder")
        params.update(self.ctc_head.parameters("ctc.proj"))
        params.update(self.decoder.parameters("decoder"))
        return dict(sorted(params.items()))

    def ctc_log_probs(self, states: Tensor) -> Tensor:
        """First-pass per-frame log-distributions over the vocabulary."""
        return nn.log_softmax(self.ctc_head(states))

    def encode(
        self,
        features: np.ndarray,
        chunk_size: int | None = None,
        ctx: TrainContext | None = None,
    ) -> Tensor:
        """Subsample raw features and run the full encoder stack.

        ``chunk_size=None`` means full-context attention.
        """
        frames = self.encoder.subsample(features, ctx)
        size = frames.shape[0] if chunk_size is None else chunk_size
        return self.encoder.encode_full(frames, size, ctx)

    def load_parameters(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(arrays) != set(params):
            missing = set(params) ^ set(arrays)
            raise ValueError(f"parameter names do not match model: {sorted(missing)[:5]}")
        for name, tensor in params.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {tensor.data.shape}")
            tensor.data[...] = src
