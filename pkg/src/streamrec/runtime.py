"""Two-pass streaming decode pipeline: a session consumes raw feature chunks,
emits first-pass partial transcripts as they firm up, and on finalize runs
the chosen second pass with latency/RTF accounting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nn
from .aed import ScoredHypothesis, attention_beam_search, rescore
from .ctc import CtcBeamState, PosteriorGrid
from .masking import LatencyBounds, latency_bounds
from .model import TwoPassModel
from .numerics import Tensor

MODES = ("ctc_only", "attention_decoder", "attention_rescoring")

RAW_PER_SUBSAMPLED = 4  # two stride-2 convolutions
SUBSAMPLE_CONTEXT = 3  # extra raw frames one subsampled frame reaches back over


@dataclass
class Timing:
    audio_ms: float
    first_pass_ms: float
    rescore_ms: float

    @property
    def rtf(self) -> float:
        return (self.first_pass_ms + self.rescore_ms) / self.audio_ms if self.audio_ms > 0 else 0.0


@dataclass
class PartialResult:
    chunk_index: int
    frames_consumed: int
    transcript: tuple[int, ...]
    nbest: list[tuple[tuple[int, ...], float]]


@dataclass
class DecodeResult:
    transcript: tuple[int, ...]
    nbest: list[ScoredHypothesis]
    mode: str
    chunk_size: int
    timing: Timing
    latency: LatencyBounds


def token_error_rate(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> float:
    """Aggregate edit distance over (hypothesis, reference) pairs divided by
    total reference length."""
    errors = 0
    total = 0
    for hyp, ref in pairs:
        errors += edit_distance(hyp, ref)
        total += len(ref)
    return errors / total if total else 0.0


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


class DecodeSession:
    """One utterance's streaming state over a read-only model.

    Raw features are buffered until they cover the next ``chunk_size``
    subsampled frames; each completed chunk extends the encoder cache, the
    posterior grid, and the incremental prefix-beam state.
    """

    def __init__(
        self,
        model: TwoPassModel,
        chunk_size: int | None,
        beam: int = 10,
        nbest: int = 10,
        frame_shift_ms: int = 10,
    ):
        if chunk_size is not None and chunk_size < 1:
            raise ValueError("chunk_size must be >= 1 (or None for full context)")
        if beam < nbest or nbest < 1:
            raise ValueError("need beam >= nbest >= 1")
        self.model = model
        self.chunk_size = chunk_size
        self.beam = beam
        self.nbest_size = nbest
        self.frame_shift_ms = frame_shift_ms
        self.raw: np.ndarray = np.zeros((0, model.config.feature_dim))
        self.cache = model.encoder.new_cache()
        self.beam_state = CtcBeamState(beam)
        self.grid_rows: list[np.ndarray] = []
        self.state_rows: list[np.ndarray] = []
        self.chunks_done = 0
        self.finalized = False
        self.first_pass_s = 0.0

    @property
    def frames_emitted(self) -> int:
        return self.cache.consumed_frames

    def _raw_needed(self, upto: int) -> int:
        # subsampled frame j reaches raw frames [4j, 4j + 6]
        return RAW_PER_SUBSAMPLED * upto + SUBSAMPLE_CONTEXT

    def _run_chunk(self, raw_slice: np.ndarray) -> None:
        start = time.perf_counter()
        with nn.no_grad():
            frames = self.model.encoder.subsample(raw_slice)
            states, _ = self.model.encoder.encode_chunk(frames, self.cache)
            log_probs = self.model.ctc_log_probs(states).data
        self.beam_state.advance(log_probs)
        self.grid_rows.append(log_probs)
        self.state_rows.append(states.data)
        self.chunks_done += 1
        self.first_pass_s += time.perf_counter() - start

    def push_chunk(self, features: np.ndarray) -> PartialResult | None:
        """Buffer raw frames; encode every chunk they complete and refresh the
        first-pass n-best.  Returns the newest partial result, if any."""
        if self.finalized:
            raise ValueError("session closed")
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.model.config.feature_dim:
            raise ValueError(f"expected (frames, {self.model.config.feature_dim}) features")
        self.raw = np.concatenate([self.raw, features], axis=0)
        if self.chunk_size is None:
            return None
        emitted_any = False
        while self.raw.shape[0] >= self._raw_needed(self.frames_emitted + self.chunk_size):
            lo = RAW_PER_SUBSAMPLED * self.frames_emitted
            hi = self._raw_needed(self.frames_emitted + self.chunk_size)
            self._run_chunk(self.raw[lo:hi])
            emitted_any = True
        if not emitted_any:
            return None
        top = self.beam_state.nbest(self.nbest_size)
        return PartialResult(
            chunk_index=self.chunks_done,
            frames_consumed=self.frames_emitted,
            transcript=top[0][0] if top else (),
            nbest=top,
        )

    def finalize(self, mode: str = "attention_rescoring", ctc_weight: float = 0.5) -> DecodeResult:
        """Flush the tail chunk and run the requested second pass."""
        if self.finalized:
            raise ValueError("session closed")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        raw_len = self.raw.shape[0]
        total_frames = (raw_len - SUBSAMPLE_CONTEXT) // RAW_PER_SUBSAMPLED if raw_len >= 7 else 0
        if total_frames == 0:
            raise ValueError("empty utterance")
        if total_frames > self.frames_emitted:
            lo = RAW_PER_SUBSAMPLED * self.frames_emitted
            self._run_chunk(self.raw[lo:raw_len])
        self.finalized = True

        effective_chunk = self.chunk_size if self.chunk_size is not None else total_frames
        states = Tensor(np.concatenate(self.state_rows, axis=0))
        first_nbest = self.beam_state.nbest(self.nbest_size)

        start = time.perf_counter()
        if mode == "ctc_only":
            hyps = [
                ScoredHypothesis(labels, score, att_score=0.0, final_score=score)
                for labels, score in first_nbest
            ]
        elif mode == "attention_rescoring":
            _, hyps = rescore(self.model.decoder, states, first_nbest, ctc_weight)
        else:
            found = attention_beam_search(
                self.model.decoder, states, beam=self.beam, max_len=total_frames + 5
            )
            hyps = [
                ScoredHypothesis(h.labels, ctc_score=0.0, att_score=h.score, final_score=h.score)
                for h in found[: self.nbest_size]
            ]
        second_pass_s = time.perf_counter() - start

        timing = Timing(
            audio_ms=raw_len * self.frame_shift_ms,
            first_pass_ms=self.first_pass_s * 1000.0,
            rescore_ms=second_pass_s * 1000.0,
        )
        return DecodeResult(
            transcript=hyps[0].labels if hyps else (),
            nbest=hyps,
            mode=mode,
            chunk_size=effective_chunk,
            timing=timing,
            latency=latency_bounds(effective_chunk, RAW_PER_SUBSAMPLED, self.frame_shift_ms),
        )


def decode_offline(
    model: TwoPassModel,
    features: np.ndarray,
    mode: str = "attention_rescoring",
    chunk_size: int | None = None,
    beam: int = 10,
    nbest: int = 10,
    ctc_weight: float = 0.5,
) -> DecodeResult:
    """Non-streaming reference path: one full encoder pass with the chunk
    mask, a fresh prefix beam over the whole grid, then the second pass.
    Matches the session path to within accumulated rounding."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    features = np.asarray(features, dtype=np.float64)
    start = time.perf_counter()
    with nn.no_grad():
        frames = model.encoder.subsample(features)
        total = frames.shape[0]
        effective_chunk = chunk_size if chunk_size is not None else total
        states = model.encoder.encode_full(frames, effective_chunk)
        grid = PosteriorGrid(model.ctc_log_probs(states).data)
    state = CtcBeamState(beam)
    state.advance(grid.log_probs)
    first_nbest = state.nbest(nbest)
    first_pass_s = time.perf_counter() - start

    start = time.perf_counter()
    if mode == "ctc_only":
        hyps = [ScoredHypothesis(l, s, 0.0, s) for l, s in first_nbest]
    elif mode == "attention_rescoring":
        _, hyps = rescore(model.decoder, states, first_nbest, ctc_weight)
    else:
        found = attention_beam_search(model.decoder, states, beam=beam, max_len=total + 5)
        hyps = [ScoredHypothesis(h.labels, 0.0, h.score, h.score) for h in found[:nbest]]
    second_pass_s = time.perf_counter() - start

    timing = Timing(
        audio_ms=features.shape[0] * 10,
        first_pass_ms=first_pass_s * 1000.0,
        rescore_ms=second_pass_s * 1000.0,
    )
    return DecodeResult(
        transcript=hyps[0].labels if hyps else (),
        nbest=hyps,
        mode=mode,
        chunk_size=effective_chunk,
        timing=timing,
        latency=latency_bounds(effective_chunk, RAW_PER_SUBSAMPLED, 10),
    )


def decode_utterance(
    model: TwoPassModel,
    features: np.ndarray,
    mode: str,
    chunk_size: int | None,
    beam: int = 10,
    nbest: int = 10,
    ctc_weight: float = 0.5,
    frame_shift_ms: int = 10,
    raw_push_size: int | None = None,
) -> DecodeResult:
    """Streaming decode of a whole utterance via a session."""
    session = DecodeSession(model, chunk_size, beam=beam, nbest=nbest, frame_shift_ms=frame_shift_ms)
    features = np.asarray(features, dtype=np.float64)
    push = raw_push_size or features.shape[0]
    for lo in range(0, features.shape[0], push):
        session.push_chunk(features[lo : lo + push])
    return session.finalize(mode, ctc_weight)


def bench(
    model: TwoPassModel,
    utterances: Sequence,
    chunk_sizes: Sequence[int | None],
    modes: Sequence[str],
    beam: int = 10,
    nbest: int = 10,
    ctc_weight: float = 0.5,
) -> list[dict]:
    """Decode the set under every (chunk, mode) pair and tabulate error/RTF/latency.

    ``utterances`` yields objects with ``tokens`` and ``features``; chunk
    ``None`` means full context.  Rows keep the given sweep order.
    """
    rows = []
    for chunk in chunk_sizes:
        for mode in modes:
            pairs = []
            compute_ms = 0.0
            audio_ms = 0.0
            lat_max = 0.0
            lat_avg = 0.0
            for utt in utterances:
                result = decode_utterance(
                    model, utt.features, mode, chunk,
                    beam=beam, nbest=nbest, ctc_weight=ctc_weight,
                )
                pairs.append((result.transcript, tuple(utt.tokens)))
                compute_ms += result.timing.first_pass_ms + result.timing.rescore_ms
                audio_ms += result.timing.audio_ms
                lat_max += result.latency.max_ms
                lat_avg += result.latency.avg_ms
            count = max(1, len(pairs))
            rows.append(
                {
                    "chunk": "full" if chunk is None else chunk,
                    "mode": mode,
                    "err": token_error_rate(pairs),
                    "rtf": compute_ms / audio_ms if audio_ms else 0.0,
                    "latency_max_ms": lat_max / count,
                    "latency_avg_ms": lat_avg / count,
                }
            )
    return rows
