"""CTC loss, greedy decoding, prefix beam search, and an exact enumeration oracle.

All probability arithmetic is in log space.  The blank token is index 0.
The beam search keeps, per label prefix, separate log-probabilities for
"last frame was blank" and "last frame was the final label", which is what
makes repeat/extend bookkeeping exact.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import Tensor, _node, logsumexp

BLANK = 0

NEG_INF = -np.inf


@dataclass
class PosteriorGrid:
    """T x V per-frame log-distributions from the first-pass head."""

    log_probs: np.ndarray

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        if self.log_probs.ndim != 2:
            raise ValueError("posterior grid must be 2-D (frames x vocab)")

    @property
    def num_frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.log_probs.shape[1]

    def validate(self, tol: float = 1e-9) -> None:
        for t in range(self.num_frames):
            if abs(logsumexp(self.log_probs[t])) > tol:
                raise ValueError(f"row {t} is not a log-distribution")


def collapse_path(path: Sequence[int]) -> tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for s in path:
        if s != prev and s != BLANK:
            out.append(int(s))
        prev = s
    return tuple(out)


def expanded_target(target: Sequence[int]) -> list[int]:
    """Blank-interleaved label sequence: [b, y1, b, y2, ..., b]."""
    ext = [BLANK]
    for y in target:
        ext.append(int(y))
        ext.append(BLANK)
    return ext


def min_frames_for(target: Sequence[int]) -> int:
    """Fewest frames that can realize the target (repeats need a separating blank)."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(log_probs: Tensor, target: Sequence[int]) -> Tensor:
    """Negative log marginal probability of ``target`` under the grid.

    Differentiable with respect to ``log_probs``.  An infeasible target
    (too few frames) yields +inf with zero gradient.
    """
    y = log_probs.data
    num_frames, vocab = y.shape
    target = [int(t) for t in target]
    if any(t <= BLANK or t >= vocab for t in target):
        raise ValueError("target token outside vocabulary")

    if num_frames < min_frames_for(target):
        warnings.warn("infeasible alignment", stacklevel=2)
        out = _node(np.asarray(np.inf), (log_probs,), lambda: None)
        out._backward = lambda: None
        return out

    ext = np.asarray(expanded_target(target), dtype=np.int64)
    s = len(ext)
    # alpha[t, j]: log prob of prefixes ending in expanded state j at frame t,
    # emission at t included.
    alpha = np.full((num_frames, s), NEG_INF)
    alpha[0, 0] = y[0, BLANK]
    if s > 1:
        alpha[0, 1] = y[0, ext[1]]
    can_skip = np.zeros(s, dtype=bool)
    can_skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    with np.errstate(invalid="ignore"):  # nan inputs propagate quietly
        for t in range(1, num_frames):
            prev = alpha[t - 1]
            step = np.full(s, NEG_INF)
            step[1:] = prev[:-1]
            skip = np.full(s, NEG_INF)
            skip[2:] = prev[:-2]
            skip = np.where(can_skip, skip, NEG_INF)
            alpha[t] = np.logaddexp(np.logaddexp(prev, step), skip) + y[t, ext]

    tails = [alpha[-1, s - 1]] + ([alpha[-1, s - 2]] if s > 1 else [])
    log_p = logsumexp(tails)
    out = _node(np.asarray(-log_p), (log_probs,), lambda: None)

    def backward():
        if not log_probs.requires_grad:
            return
        # beta, emission at t included, mirrored recursion
        beta = np.full((num_frames, s), NEG_INF)
        beta[-1, s - 1] = y[-1, BLANK]
        if s > 1:
            beta[-1, s - 2] = y[-1, ext[s - 2]]
        can_skip_f = np.zeros(s, dtype=bool)
        can_skip_f[: s - 2] = (ext[: s - 2] != BLANK) & (ext[: s - 2] != ext[2:])
        for t in range(num_frames - 2, -1, -1):
            nxt = beta[t + 1]
            step = np.full(s, NEG_INF)
            step[: max(0, s - 1)] = nxt[1:]
            skip = np.full(s, NEG_INF)
            skip[: max(0, s - 2)] = nxt[2:]
            skip = np.where(can_skip_f, skip, NEG_INF)
            beta[t] = np.logaddexp(np.logaddexp(nxt, step), skip) + y[t, ext]

        # d(-log P)/dy[t, k] = -exp(LSE_{j: ext j = k}(alpha + beta) - y[t,k] - log P)
        gamma = alpha + beta
        grad = np.zeros_like(y)
        for t in range(num_frames):
            acc = np.full(vocab, NEG_INF)
            for j in range(s):
                k = ext[j]
                acc[k] = np.logaddexp(acc[k], gamma[t, j])
            occupied = acc > NEG_INF
            grad[t, occupied] = -np.exp(acc[occupied] - y[t, occupied] - log_p)
        log_probs._accumulate(float(out.grad) * grad)

    out._backward = backward
    return out


def ctc_greedy(grid: PosteriorGrid | np.ndarray) -> tuple[int, ...]:
    """Per-frame argmax path, collapsed.  Ties go to the lower token index."""
    y = grid.log_probs if isinstance(grid, PosteriorGrid) else np.asarray(grid)
    return collapse_path(np.argmax(y, axis=1))


@dataclass
class CtcPrefix:
    """A collapsed label prefix with split last-emission probabilities."""

    labels: tuple[int, ...]
    p_blank: float
    p_nonblank: float

    @property
    def total(self) -> float:
        return np.logaddexp(self.p_blank, self.p_nonblank)


def _rank_key(labels: tuple[int, ...], score: float):
    # descending score, then shorter, then lexicographic
    return (-score, len(labels), labels)


class CtcBeamState:
    """Incremental prefix-beam state; feeding rows one chunk at a time is
    exactly equivalent to one pass over the whole grid."""

    def __init__(self, beam: int):
        if beam < 1:
            raise ValueError("beam must be >= 1")
        self.beam = beam
        self.prefixes: list[CtcPrefix] = [CtcPrefix((), 0.0, NEG_INF)]
        self.frames_seen = 0

    def advance(self, log_probs: np.ndarray) -> None:
        """Consume one or more frames of per-token log-probabilities."""
        rows = np.asarray(log_probs, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        for row in rows:
            nxt: dict[tuple[int, ...], list[float]] = {}

            def bucket(labels: tuple[int, ...]) -> list[float]:
                entry = nxt.get(labels)
                if entry is None:
                    entry = [NEG_INF, NEG_INF]
                    nxt[labels] = entry
                return entry

            for pre in self.prefixes:
                last = pre.labels[-1] if pre.labels else None
                for tok in range(row.shape[0]):
                    lp = row[tok]
                    if tok == BLANK:
                        entry = bucket(pre.labels)
                        entry[0] = logsumexp([entry[0], pre.p_blank + lp, pre.p_nonblank + lp])
                    elif tok == last:
                        # repeat without blank extends the same prefix
                        entry = bucket(pre.labels)
                        entry[1] = logsumexp([entry[1], pre.p_nonblank + lp])
                        # after a blank the repeat starts a new label
                        grown = bucket(pre.labels + (tok,))
                        grown[1] = logsumexp([grown[1], pre.p_blank + lp])
                    else:
                        grown = bucket(pre.labels + (tok,))
                        grown[1] = logsumexp([grown[1], pre.p_blank + lp, pre.p_nonblank + lp])

            ranked = sorted(
                (CtcPrefix(labels, pb, pnb) for labels, (pb, pnb) in nxt.items()),
                key=lambda c: _rank_key(c.labels, c.total),
            )
            self.prefixes = ranked[: self.beam]
            self.frames_seen += 1

    def nbest(self, n: int) -> list[tuple[tuple[int, ...], float]]:
        """Top-n (labels, log marginal score), zero-probability prefixes dropped."""
        scored = [(p.labels, float(p.total)) for p in self.prefixes if p.total > NEG_INF]
        scored.sort(key=lambda item: _rank_key(item[0], item[1]))
        return scored[:n]


def ctc_prefix_beam_search(
    grid: PosteriorGrid | np.ndarray,
    beam: int = 10,
    nbest: int = 10,
) -> list[tuple[tuple[int, ...], float]]:
    """Approximate per-label-sequence log marginals, best first."""
    if beam < nbest or nbest < 1:
        raise ValueError("need beam >= nbest >= 1")
    y = grid.log_probs if isinstance(grid, PosteriorGrid) else np.asarray(grid)
    state = CtcBeamState(beam)
    state.advance(y)
    return state.nbest(nbest)


def ctc_brute_force(grid: PosteriorGrid | np.ndarray) -> dict[tuple[int, ...], float]:
    """Exact label-sequence log marginals by enumerating every frame path.

    Only for oracle-sized grids (V**T capped at 1e6).
    """
    y = grid.log_probs if isinstance(grid, PosteriorGrid) else np.asarray(grid)
    num_frames, vocab = y.shape
    if vocab ** num_frames > 1_000_000:
        raise ValueError("oracle size limit")
    acc: dict[tuple[int, ...], float] = {}
    for path in itertools.product(range(vocab), repeat=num_frames):
        logp = sum(y[t, s] for t, s in enumerate(path))
        seq = collapse_path(path)
        acc[seq] = acc.get(seq, 0.0) + math.exp(logp)
    return {seq: math.log(p) if p > 0.0 else NEG_INF for seq, p in acc.items()}
