"""Small parameterised building blocks shared by the encoder and decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nn
from .numerics import Tensor


@dataclass
class TrainContext:
    """Carries the dropout rate and a seeded generator through a forward pass.

    Layers draw their masks in a fixed order, so a given seed reproduces the
    exact same stochastic forward.  ``None`` means evaluation mode.
    """

    dropout: float
    rng: np.random.Generator

    def apply(self, x: Tensor) -> Tensor:
        if self.dropout <= 0.0:
            return x
        keep = 1.0 - self.dropout
        mask = (self.rng.random(x.shape) < keep) / keep
        return nn.mul(x, Tensor(mask))


def dropout(x: Tensor, ctx: TrainContext | None) -> Tensor:
    return x if ctx is None else ctx.apply(x)


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = nn.param(rng.standard_normal((d_in, d_out)) / math.sqrt(d_in))
        self.b = nn.param(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return nn.add(nn.matmul(x, self.w), self.b)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, d: int):
        self.gamma = nn.param(np.ones(d))
        self.beta = nn.param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return nn.layer_norm(x, self.gamma, self.beta)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


class MultiHeadAttention:
    """Scaled dot-product attention with separate query and key/value sources.

    Queries and keys/values may have different lengths (streaming history,
    cross-attention); the optional boolean mask has shape (Tq, Tk).
    """

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if d_model % heads != 0:
            raise ValueError("d_model must be divisible by heads")
        self.heads = heads
        self.d_head = d_model // heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor, length: int) -> Tensor:
        x = nn.reshape(x, (length, self.heads, self.d_head))
        return nn.transpose(x, (1, 0, 2))

    def __call__(
        self,
        q_src: Tensor,
        kv_src: Tensor,
        mask: np.ndarray | None,
        ctx: TrainContext | None = None,
    ) -> Tensor:
        tq, tk = q_src.shape[0], kv_src.shape[0]
        q = self._split(self.wq(q_src), tq)
        k = self._split(self.wk(kv_src), tk)
        v = self._split(self.wv(kv_src), tk)
        scores = nn.scale(nn.matmul(q, nn.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.d_head))
        probs = nn.masked_softmax(scores, mask)
        probs = dropout(probs, ctx)
        out = nn.matmul(probs, v)  # (h, Tq, d_head)
        out = nn.reshape(nn.transpose(out, (1, 0, 2)), (tq, self.heads * self.d_head))
        return self.wo(out)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            params.update(lin.parameters(f"{prefix}.{name}"))
        return params


class FeedForward:
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.lin1 = Linear(d_model, d_ff, rng)
        self.lin2 = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor, ctx: TrainContext | None = None) -> Tensor:
        h = nn.gelu(self.lin1(x))
        h = dropout(h, ctx)
        return self.lin2(h)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {**self.lin1.parameters(f"{prefix}.lin1"), **self.lin2.parameters(f"{prefix}.lin2")}


def sinusoid_positions(offset: int, length: int, d_model: int) -> np.ndarray:
    """Absolute sinusoidal encodings for positions [offset, offset + length)."""
    pos = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, dim / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2] if d_model % 2 == 0 else angles[:, :-1])
    return pe
