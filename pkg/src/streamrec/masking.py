"""Attention visibility masks, chunk-size sampling, and latency arithmetic.

Masks are plain boolean (T, T) arrays: ``bits[q, k]`` says whether query
frame q may attend key frame k.  Frames are grouped into chunks of a fixed
size anchored at frame 0; a frame sees its own chunk and every earlier one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class ChunkPolicy:
    """How the training loop (or a decoder) picks the attention chunk size.

    mode 'full' always uses the whole utterance, 'static' a fixed size,
    'dynamic' flips between full and a uniform streaming size per batch.
    """

    mode: str = "dynamic"
    static_size: int | None = None
    cap: int = 25
    full_fraction: float = 0.5

    def __post_init__(self):
        if self.mode not in ("full", "static", "dynamic"):
            raise ValueError(f"unknown chunk mode {self.mode!r}")
        if self.mode == "static" and (self.static_size is None or self.static_size < 1):
            raise ValueError("static mode needs static_size >= 1")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")
        if not 0.0 <= self.full_fraction <= 1.0:
            raise ValueError("full_fraction must be in [0, 1]")

    @classmethod
    def full(cls) -> "ChunkPolicy":
        return cls(mode="full")

    @classmethod
    def static(cls, size: int) -> "ChunkPolicy":
        return cls(mode="static", static_size=size)

    @classmethod
    def dynamic(cls, cap: int = 25, full_fraction: float = 0.5) -> "ChunkPolicy":
        return cls(mode="dynamic", cap=cap, full_fraction=full_fraction)


def make_chunk_mask(num_frames: int, chunk_size: int) -> np.ndarray:
    """Boolean (T, T) visibility: query q sees key k iff k's chunk <= q's chunk.

    ``chunk_size >= T`` degenerates to full attention, ``chunk_size == 1``
    to strictly left (inclusive lower-triangular) attention.
    """
    if num_frames < 1 or chunk_size < 1:
        raise ValueError("invalid mask size")
    chunk_of = np.arange(num_frames) // chunk_size
    return chunk_of[None, :] <= chunk_of[:, None]


def sample_chunk_size(
    l_max: int,
    policy: ChunkPolicy,
    u: float,
    v: float,
) -> int:
    """Draw a chunk size for one batch from two caller-supplied uniforms.

    Dynamic mode: with probability ``full_fraction`` (u strictly above the
    threshold) the full length l_max; otherwise an unbiased integer uniform
    on [1, min(cap, l_max - 1)] derived from v via floor(v * span) + 1.
    The boundary u == threshold falls on the streaming side.
    """
    if policy.mode == "full":
        return l_max
    if policy.mode == "static":
        return int(policy.static_size)
    if l_max < 2:
        raise ValueError("utterance too short for streaming chunk")
    if u > 1.0 - policy.full_fraction:
        return l_max
    span = min(policy.cap, l_max - 1)
    return int(v * span) + 1


class LatencyBounds(NamedTuple):
    max_ms: float
    avg_ms: float


def latency_bounds(chunk_size: int, subsample: int, frame_shift_ms: int) -> LatencyBounds:
    """Per-chunk latency implied by a decode chunk size.

    The worst-case wait is one whole chunk of raw frames; a frame arriving
    mid-chunk waits half a chunk on average.
    """
    if chunk_size < 1 or subsample < 1 or frame_shift_ms < 1:
        raise ValueError("latency_bounds arguments must be >= 1")
    max_ms = float(chunk_size * subsample * frame_shift_ms)
    return LatencyBounds(max_ms, max_ms / 2.0)
