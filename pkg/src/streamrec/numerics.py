"""Dense float64 tensors with reverse-mode automatic differentiation.

Implements exactly the operations the recognizer needs (matrix products,
layer norm, masked attention softmax, embeddings, convolutions, the usual
activations) rather than a general broadcasting engine.  Everything is
64-bit so gradient checks and streaming-equivalence checks can be tight.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_GRAD_ENABLED = True

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / numeric probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense f64 array plus an optional gradient buffer.

    Operations on tensors record parent links so that ``backward`` can
    replay the graph in reverse topological order, visiting each node
    exactly once and accumulating gradients additively.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        data = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to 1-d
        self.data = data if data.flags["C_CONTIGUOUS"] else np.ascontiguousarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = topo_nodes(self)
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # arithmetic sugar; the named functions below do the work
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data) -> Tensor:
    return Tensor(data)


def param(data) -> Tensor:
    """A leaf tensor that collects gradients (a learnable parameter)."""
    return Tensor(data, requires_grad=True)


def topo_nodes(root: Tensor) -> list[Tensor]:
    """Nodes of ``root``'s computation graph in topological (inputs-first) order.

    Iterative post-order walk; every node appears exactly once even when it
    feeds several consumers.
    """
    order: list[Tensor] = []
    seen = {id(root)}
    stack: list[tuple[Tensor, Iterable[Tensor]]] = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def graph_leaves(root: Tensor) -> list[Tensor]:
    """Leaf tensors (no recorded parents) feeding ``root``."""
    return [n for n in topo_nodes(root) if not n._parents]


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also allows a trailing-axis bias vector for ``b``."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape and not (b.ndim == 1 and a.shape[-1] == b.shape[0]):
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _node(a.data + b.data, (a, b), lambda: None)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            if b.shape == a.shape:
                b._accumulate(g)
            else:
                b._accumulate(g.reshape(-1, b.shape[0]).sum(axis=0))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = _node(a.data * b.data, (a, b), lambda: None)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    out._backward = backward
    return out


def scale(a: Tensor, s: float) -> Tensor:
    a = _wrap(a)
    out = _node(a.data * s, (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * s)

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or identically-batched 3-D matrix product (no broadcasting)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ValueError(f"matmul wants matching 2-D or 3-D operands, got {a.shape} @ {b.shape}")
    out = _node(np.matmul(a.data, b.data), (a, b), lambda: None)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))

    out._backward = backward
    return out


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.transpose(inv))

    out._backward = backward
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _wrap(a)
    out = _node(a.data.reshape(shape), (a,), lambda: None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.shape))

    out._backward = backward
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    out = _node(np.concatenate([p.data for p in parts], axis=axis), parts, lambda: None)
    sizes = [p.shape[axis] for p in parts]

    def backward():
        g = out.grad
        off = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(off, off + n)
                p._accumulate(g[tuple(idx)])
            off += n

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = _node(np.maximum(x.data, 0.0), (x,), lambda: None)

    def backward():
        if x.requires_grad:
            x._accumulate(out.grad * (x.data > 0.0))

    out._backward = backward
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _wrap(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = _node(x.data * cdf, (x,), lambda: None)

    def backward():
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
            x._accumulate(out.grad * (cdf + x.data * pdf))

    out._backward = backward
    return out


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the last axis: first half gated by sigmoid(second half)."""
    x = _wrap(x)
    d2 = x.shape[-1]
    if d2 % 2 != 0:
        raise ValueError("glu needs an even trailing dimension")
    d = d2 // 2
    a = x.data[..., :d]
    with np.errstate(over="ignore"):  # saturates cleanly to 0
        s = 1.0 / (1.0 + np.exp(-x.data[..., d:]))
    out = _node(a * s, (x,), lambda: None)

    def backward():
        if x.requires_grad:
            g = out.grad
            gx = np.empty_like(x.data)
            gx[..., :d] = g * s
            gx[..., d:] = g * a * s * (1.0 - s)
            x._accumulate(gx)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# normalization / attention


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then apply the affine (gamma, beta)."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _node(gamma.data * xhat + beta.data, (x, gamma, beta), lambda: None)

    def backward():
        g = out.grad
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, x.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gh - m1 - xhat * m2))

    out._backward = backward
    return out


def masked_softmax(logits: Tensor, mask: np.ndarray | None) -> Tensor:
    """Softmax over the last axis with hard visibility masking.

    ``mask`` is boolean with shape equal to the last two logit dimensions
    (broadcast across any leading axes); masked positions get exactly zero
    probability.  A row with no visible position is an error.
    """
    logits = _wrap(logits)
    if mask is None:
        shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=-1, keepdims=True)
    else:
        mask = np.asarray(mask, dtype=bool)
        if logits.ndim < 2 or mask.shape != logits.shape[-2:]:
            raise ValueError(
                f"mask shape {mask.shape} does not match logit rows {logits.shape[-2:]}"
            )
        if not mask.any(axis=-1).all():
            raise ValueError("unattendable position")
        neg = np.where(mask, logits.data, -np.inf)
        shifted = neg - neg.max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
        p = e / e.sum(axis=-1, keepdims=True)
    out = _node(p, (logits,), lambda: None)

    def backward():
        if logits.requires_grad:
            g = out.grad
            dot = (g * p).sum(axis=-1, keepdims=True)
            logits._accumulate(p * (g - dot))

    out._backward = backward
    return out


def softmax(logits: Tensor) -> Tensor:
    return masked_softmax(logits, None)


def log_softmax(x: Tensor) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = _node(ls, (x,), lambda: None)

    def backward():
        if x.requires_grad:
            g = out.grad
            x._accumulate(g - np.exp(ls) * g.sum(axis=-1, keepdims=True))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# lookups


def embedding(weight: Tensor, ids) -> Tensor:
    """Row gather: weight is (V, d), ids an int sequence of length L."""
    weight = _wrap(weight)
    ids = np.asarray(ids, dtype=np.int64)
    out = _node(weight.data[ids], (weight,), lambda: None)

    def backward():
        if weight.requires_grad:
            gw = np.zeros_like(weight.data)
            np.add.at(gw, ids, out.grad)
            weight._accumulate(gw)

    out._backward = backward
    return out


def pick(x: Tensor, ids) -> Tensor:
    """Per-row gather: x is (L, V), ids length L; returns the (L,) picked values."""
    x = _wrap(x)
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(x.shape[0])
    out = _node(x.data[rows, ids], (x,), lambda: None)

    def backward():
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, (rows, ids), out.grad)
            x._accumulate(gx)

    out._backward = backward
    return out


def sum_all(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = _node(np.asarray(x.data.sum()), (x,), lambda: None)

    def backward():
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(out.grad)))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# convolutions


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid 2-D convolution: x (Cin,H,W), w (Cout,Cin,kh,kw), b (Cout,)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    cout, cin, kh, kw = w.shape
    if x.shape[0] != cin:
        raise ValueError(f"conv2d channel mismatch: {x.shape[0]} vs {cin}")
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ValueError("conv2d input smaller than kernel")
    win = sliding_window_view(x.data, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    y = np.einsum("oikl,ihwkl->ohw", w.data, win, optimize=True) + b.data[:, None, None]
    out = _node(y, (x, w, b), lambda: None)
    hp, wp = y.shape[1], y.shape[2]

    def backward():
        g = out.grad
        if b.requires_grad:
            b._accumulate(g.sum(axis=(1, 2)))
        if w.requires_grad:
            w._accumulate(np.einsum("ohw,ihwkl->oikl", g, win, optimize=True))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for ki in range(kh):
                for kj in range(kw):
                    patch = np.einsum("ohw,oi->ihw", g, w.data[:, :, ki, kj], optimize=True)
                    gx[:, ki : ki + stride * (hp - 1) + 1 : stride,
                       kj : kj + stride * (wp - 1) + 1 : stride] += patch
            x._accumulate(gx)

    out._backward = backward
    return out


def depthwise_conv1d(x: Tensor, w: Tensor, left_context: np.ndarray) -> Tensor:
    """Causal depthwise conv along axis 0: x (T,d), w (K,d), left_context (K-1,d).

    Output frame t sees x[t-K+1 .. t]; ``left_context`` supplies the frames
    before the first input frame and takes no gradient.
    """
    x, w = _wrap(x), _wrap(w)
    k, d = w.shape
    if x.shape[-1] != d:
        raise ValueError(f"depthwise_conv1d channel mismatch: {x.shape[-1]} vs {d}")
    left = np.asarray(left_context, dtype=np.float64).reshape(k - 1, d) if k > 1 else np.zeros((0, d))
    xp = np.concatenate([left, x.data], axis=0)
    win = sliding_window_view(xp, k, axis=0)  # (T, d, K)
    y = np.einsum("tdk,kd->td", win, w.data, optimize=True)
    out = _node(y, (x, w), lambda: None)
    t = x.shape[0]

    def backward():
        g = out.grad
        if w.requires_grad:
            w._accumulate(np.einsum("td,tdk->kd", g, win, optimize=True))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for ki in range(k):
                gxp[ki : ki + t] += g * w.data[ki]
            x._accumulate(gxp[k - 1 :])

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# scalar helpers / validation


def logsumexp(values) -> float:
    """log(sum(exp(v))) with the usual max shift; tolerates -inf entries."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty reduction")
    m = v.max()
    if not np.isfinite(m):
        return float(m)  # all -inf, or propagate nan/+inf
    return float(m + np.log(np.exp(v - m).sum()))


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    num_samples: int = 120,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients of the scalar ``f()`` against central differences.

    Returns the max over sampled coordinates of
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    rng = rng or np.random.default_rng(0)
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.data).all():
        raise ValueError("non-finite objective")
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    n = min(num_samples, total)
    coords = rng.choice(total, size=n, replace=False)
    bounds = np.cumsum(sizes)

    def evaluate() -> float:
        with no_grad():
            val = f().item()
        if not math.isfinite(val):
            raise ValueError("non-finite objective")
        return val

    worst = 0.0
    for c in coords:
        pi = int(np.searchsorted(bounds, c, side="right"))
        j = int(c - (bounds[pi - 1] if pi > 0 else 0))
        p = params[pi]
        x0 = p.data.flat[j]
        p.data.flat[j] = x0 + eps
        f_plus = evaluate()
        p.data.flat[j] = x0 - eps
        f_minus = evaluate()
        p.data.flat[j] = x0
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[pi].flat[j]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
