"""Trainable two-pass streaming sequence recognizer.

A chunk-masked shared encoder feeds a streaming CTC first pass; an
attention decoder rescores the CTC n-best at utterance end.  Dynamic chunk
training makes one model serve every latency point.
"""

from .aed import AttentionDecoder, DecoderConfig, ScoredHypothesis, attention_beam_search, rescore
from .ctc import (
    CtcBeamState,
    CtcPrefix,
    PosteriorGrid,
    ctc_brute_force,
    ctc_greedy,
    ctc_loss,
    ctc_prefix_beam_search,
)
from .encoder import EncoderCache, EncoderConfig, SharedEncoder, causal_conv
from .masking import ChunkPolicy, LatencyBounds, latency_bounds, make_chunk_mask, sample_chunk_size
from .model import ModelConfig, TwoPassModel
from .numerics import Tensor, grad_check, logsumexp, masked_softmax, no_grad
from .runtime import DecodeResult, DecodeSession, bench, decode_offline, decode_utterance, token_error_rate
from .trainer import (
    Adam,
    Checkpoint,
    SpecAugmentConfig,
    SyntheticTask,
    TrainConfig,
    average_checkpoints,
    checkpoint_from_model,
    combined_loss,
    load_checkpoint,
    lr_schedule,
    make_dataset,
    model_from_checkpoint,
    read_dataset,
    save_checkpoint,
    spec_augment,
    train,
    write_dataset,
)

__all__ = [
    "Adam",
    "AttentionDecoder",
    "Checkpoint",
    "ChunkPolicy",
    "CtcBeamState",
    "CtcPrefix",
    "DecodeResult",
    "DecodeSession",
    "DecoderConfig",
    "EncoderCache",
    "EncoderConfig",
    "LatencyBounds",
    "ModelConfig",
    "PosteriorGrid",
    "ScoredHypothesis",
    "SharedEncoder",
    "SpecAugmentConfig",
    "SyntheticTask",
    "Tensor",
    "TrainConfig",
    "TwoPassModel",
    "attention_beam_search",
    "average_checkpoints",
    "bench",
    "causal_conv",
    "checkpoint_from_model",
    "combined_loss",
    "ctc_brute_force",
    "ctc_greedy",
    "ctc_loss",
    "ctc_prefix_beam_search",
    "decode_offline",
    "decode_utterance",
    "grad_check",
    "latency_bounds",
    "load_checkpoint",
    "logsumexp",
    "lr_schedule",
    "make_chunk_mask",
    "make_dataset",
    "masked_softmax",
    "model_from_checkpoint",
    "no_grad",
    "read_dataset",
    "rescore",
    "sample_chunk_size",
    "save_checkpoint",
    "spec_augment",
    "token_error_rate",
    "train",
    "write_dataset",
]
