"""The attention decoder: transformer layers over encoder states, driving
either autoregressive beam search or teacher-forcing rescoring of a CTC
n-best list (final score = ctc_weight * ctc + attention, attention at 1.0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nn
from .layers import FeedForward, Linear, LayerNorm, MultiHeadAttention, TrainContext, dropout, sinusoid_positions
from .masking import make_chunk_mask
from .numerics import Tensor


@dataclass(frozen=True)
class DecoderConfig:
    vocab: int
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.vocab < 3:
            raise ValueError("vocab must hold blank, one payload token, and sos/eos")


@dataclass
class ScoredHypothesis:
    """A candidate transcript with its first- and second-pass scores."""

    labels: tuple[int, ...]
    ctc_score: float
    att_score: float
    final_score: float


@dataclass
class BeamHypothesis:
    labels: tuple[int, ...]
    score: float
    truncated: bool = False


class DecoderLayer:
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.heads, rng)
        self.ln_cross = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, cfg.heads, rng)
        self.ln_ff = LayerNorm(d)
        self.ff = FeedForward(d, cfg.d_ff, rng)

    def forward(self, x: Tensor, states: Tensor, self_mask: np.ndarray, ctx: TrainContext | None) -> Tensor:
        h = self.ln_self(x)
        x = nn.add(x, dropout(self.self_attn(h, h, self_mask, ctx), ctx))
        x = nn.add(x, dropout(self.cross_attn(self.ln_cross(x), states, None, ctx), ctx))
        x = nn.add(x, dropout(self.ff(self.ln_ff(x), ctx), ctx))
        return x

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.ln_self.parameters(f"{prefix}.ln_self"))
        params.update(self.self_attn.parameters(f"{prefix}.self_attn"))
        params.update(self.ln_cross.parameters(f"{prefix}.ln_cross"))
        params.update(self.cross_attn.parameters(f"{prefix}.cross_attn"))
        params.update(self.ln_ff.parameters(f"{prefix}.ln_ff"))
        params.update(self.ff.parameters(f"{prefix}.ff"))
        return params


class AttentionDecoder:
    """Causal self-attention over the token prefix, full cross-attention over
    encoder states.  sos and eos share the last vocabulary id; blank is 0."""

    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        self.embed = nn.param(rng.standard_normal((cfg.vocab, d)) / math.sqrt(d))
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.layers)]
        self.ln_final = LayerNorm(d)
        self.out = Linear(d, cfg.vocab, rng)

    @property
    def sos(self) -> int:
        return self.cfg.vocab - 1

    @property
    def eos(self) -> int:
        return self.cfg.vocab - 1

    def forward(self, states: Tensor, y_in: Sequence[int], ctx: TrainContext | None = None) -> Tensor:
        """Logits (len(y_in), vocab); row i conditions on y_in[:i+1] and all states."""
        ids = [int(t) for t in y_in]
        if any(t < 0 or t >= self.cfg.vocab for t in ids):
            raise ValueError("vocabulary overflow")
        length = len(ids)
        x = nn.scale(nn.embedding(self.embed, ids), math.sqrt(self.cfg.d_model))
        x = nn.add(x, Tensor(sinusoid_positions(0, length, self.cfg.d_model)))
        self_mask = make_chunk_mask(length, 1)
        for layer in self.layers:
            x = layer.forward(x, states, self_mask, ctx)
        return self.out(self.ln_final(x))

    def score_labels(self, states: Tensor, labels: Sequence[int]) -> float:
        """Teacher-forcing log-probability of ``labels`` followed by eos."""
        labels = [int(t) for t in labels]
        with nn.no_grad():
            logits = self.forward(states, [self.sos] + labels)
            logp = nn.log_softmax(logits).data
        targets = labels + [self.eos]
        return float(sum(logp[i, t] for i, t in enumerate(targets)))

    def parameters(self, prefix: str = "decoder") -> dict[str, Tensor]:
        params = {f"{prefix}.embed": self.embed}
        for i, layer in enumerate(self.layers):
            params.update(layer.parameters(f"{prefix}.layers.{i}"))
        params.update(self.ln_final.parameters(f"{prefix}.ln_final"))
        params.update(self.out.parameters(f"{prefix}.out"))
        return params


def attention_beam_search(
    decoder: AttentionDecoder,
    states: Tensor,
    beam: int = 10,
    max_len: int = 50,
) -> list[BeamHypothesis]:
    """Length-capped beam search; score is the summed token log-prob incl. eos.

    Blank is never proposed (it belongs to the CTC pass).  Hypotheses still
    active at the cap are returned flagged as truncated.  Ties break
    lexicographically on the label sequence.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    active: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    ended: list[BeamHypothesis] = []
    payload = list(range(1, decoder.cfg.vocab - 1))  # blank and sos/eos excluded
    with nn.no_grad():
        for _ in range(max_len):
            # eos competes with every payload token inside one pool, so
            # beam=1 follows the plain greedy path
            pool: list[tuple[tuple[int, ...], float, bool]] = []
            for labels, score in active:
                logits = decoder.forward(states, [decoder.sos] + list(labels))
                logp = nn.log_softmax(logits).data[-1]
                pool.append((labels, score + float(logp[decoder.eos]), True))
                for tok in payload:
                    pool.append((labels + (tok,), score + float(logp[tok]), False))
            pool.sort(key=lambda e: (-e[1], e[0]))
            top = pool[:beam]
            active = [(labels, score) for labels, score, done in top if not done]
            ended.extend(BeamHypothesis(labels, score) for labels, score, done in top if done)
            ended.sort(key=lambda h: (-h.score, h.labels))
            if not active:
                break
            # scores only decrease along a path, so once the beam-th ended
            # hypothesis beats the best active one nothing can improve
            if len(ended) >= beam and ended[beam - 1].score >= active[0][1]:
                break
    results = ended + [BeamHypothesis(labels, score, truncated=True) for labels, score in active]
    results.sort(key=lambda h: (-h.score, h.labels))
    return results[:beam]


def rescore(
    decoder: AttentionDecoder,
    states: Tensor,
    nbest: Sequence[tuple[Sequence[int], float]],
    ctc_weight: float = 0.5,
) -> tuple[ScoredHypothesis, list[ScoredHypothesis]]:
    """Second pass: teacher-force each CTC hypothesis and combine the scores.

    final = ctc_weight * ctc_score + att_score, attention weighted at 1.0.
    Ties prefer the higher ctc_score, then lexicographic order.
    """
    if not nbest:
        raise ValueError("nothing to rescore")
    if ctc_weight < 0.0:
        raise ValueError("ctc_weight must be >= 0")
    rescored = []
    for labels, ctc_score in nbest:
        labels = tuple(int(t) for t in labels)
        att = decoder.score_labels(states, labels)
        rescored.append(
            ScoredHypothesis(
                labels=labels,
                ctc_score=float(ctc_score),
                att_score=att,
                final_score=ctc_weight * float(ctc_score) + att,
            )
        )
    rescored.sort(key=lambda h: (-h.final_score, -h.ctc_score, h.labels))
    return rescored[0], rescored
