"""Minimal dense-tensor engine: float64 arrays with reverse-mode autodiff.

A Tensor wraps a C-contiguous float64 numpy array. Differentiable ops
record a TapeNode (op tag, parent tensors, gradient rule); `backward`
walks the recorded graph once in reverse topological order and
accumulates gradients into `.grad` of every tensor that requires them.
The tape is rebuilt on every forward pass (define-by-run) and assumes a
single writer; concurrent use needs disjoint tapes.

Broadcasting is restricted to trailing-dimension expansion: two shapes
combine only when they are equal or one is a suffix of the other.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

# Tape recording can be suspended (evaluation paths) via no_grad().
_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()
        return False


class TapeNode:
    """Backward-graph record: op tag, parent tensors, and the gradient rule.

    The accumulated gradient itself lives on the owning Tensor (`.grad`
    for leaves; transient dict entries during a backward pass otherwise).
    """

    __slots__ = ("op", "parents", "grad_fn")

    def __init__(self, op: str, parents: tuple, grad_fn: Callable[[Array], tuple]):
        self.op = op
        self.parents = parents
        self.grad_fn = grad_fn


class Tensor:
    """Dense float64 value, optionally participating in autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data: Array = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.node: TapeNode | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic sugar; scalars are wrapped as shape-() constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def param(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """Trainable tensor. With `rng`, data is a shape and values are drawn
    uniform(-s, s) where s defaults to 1/sqrt(fan_in) (first dim)."""
    if rng is not None:
        shape = tuple(data)
        s = scale if scale is not None else 1.0 / np.sqrt(shape[0])
        return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)
    return Tensor(data, requires_grad=True)


def _make(out_data: Array, op: str, parents: tuple, grad_fn) -> Tensor:
    req = _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents)
    t = Tensor(out_data, requires_grad=req)
    if req:
        t.node = TapeNode(op, parents, grad_fn)
    return t


def _suffix_compatible(sa: tuple, sb: tuple) -> bool:
    if len(sa) >= len(sb):
        return sa[len(sa) - len(sb):] == sb
    return sb[len(sb) - len(sa):] == sa


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if not _suffix_compatible(a.shape, b.shape):
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not "
                         "trailing-broadcast compatible")


def _reduce_to(grad: Array, shape: tuple) -> Array:
    # Undo trailing-style broadcasting: sum over the extra leading axes.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)
    return _make(a.data + b.data, "add", (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)
    return _make(a.data - b.data, "sub", (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    def grad_fn(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)
    return _make(ad * bd, "mul", (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    def grad_fn(g):
        return (_reduce_to(g / bd, a.shape),
                _reduce_to(-g * ad / (bd * bd), b.shape))
    return _make(ad / bd, "div", (a, b), grad_fn)


def neg(a) -> Tensor:
    a = as_tensor(a)
    def grad_fn(g):
        return (-g,)
    return _make(-a.data, "neg", (a,), grad_fn)


def minimum(a, b) -> Tensor:
    """Elementwise min; the gradient follows the smaller operand (ties -> a)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "minimum")
    take_a = a.data <= b.data
    def grad_fn(g):
        return (_reduce_to(g * take_a, a.shape),
                _reduce_to(g * ~take_a, b.shape))
    return _make(np.minimum(a.data, b.data), "minimum", (a, b), grad_fn)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where unclamped (inclusive)."""
    a = as_tensor(a)
    if lo > hi:
        raise ValueError(f"clip: lo {lo} exceeds hi {hi}")
    inside = (a.data >= lo) & (a.data <= hi)
    def grad_fn(g):
        return (g * inside,)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), grad_fn)


# ---------------------------------------------------------------------------
# activations and transcendentals


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    def grad_fn(g):
        return (g * mask,)
    return _make(a.data * mask, "relu", (a,), grad_fn)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope)
    def grad_fn(g):
        return (g * scale,)
    return _make(a.data * scale, "leaky_relu", (a,), grad_fn)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    out = np.where(a.data > 0, a.data, alpha * np.expm1(a.data))
    def grad_fn(g):
        return (g * np.where(a.data > 0, 1.0, out + alpha),)
    return _make(out, "elu", (a,), grad_fn)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    def grad_fn(g):
        return (g * (1.0 - out * out),)
    return _make(out, "tanh", (a,), grad_fn)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    def grad_fn(g):
        return (g * out,)
    return _make(out, "exp", (a,), grad_fn)


def log(a) -> Tensor:
    a = as_tensor(a)
    def grad_fn(g):
        return (g / a.data,)
    return _make(np.log(a.data), "log", (a,), grad_fn)


def softmax(a, axis: int = -1) -> Tensor:
    """Stable softmax: the max along `axis` is subtracted before exp, which
    makes the result invariant to exact shifts of the input."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    def grad_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)
    return _make(y, "softmax", (a,), grad_fn)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in (shape if isinstance(shape, Sequence) else (shape,)))
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ValueError(f"reshape: cannot view {a.shape} as {shape}") from e
    old = a.shape
    def grad_fn(g):
        return (g.reshape(old),)
    return _make(np.ascontiguousarray(out), "reshape", (a,), grad_fn)


def swap_last2(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        raise ValueError(f"swap_last2: needs >= 2 dims, got shape {a.shape}")
    def grad_fn(g):
        return (np.ascontiguousarray(np.swapaxes(g, -1, -2)),)
    return _make(np.ascontiguousarray(np.swapaxes(a.data, -1, -2)),
                 "swap_last2", (a,), grad_fn)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat: empty input list")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    def grad_fn(g):
        return tuple(np.ascontiguousarray(c) for c in np.split(g, splits, axis=axis))
    return _make(out, "concat", tuple(parts), grad_fn)


def tsum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        out = a.data.sum()
        def grad_fn(g):
            return (np.broadcast_to(g, a.shape).copy(),)
    else:
        out = a.data.sum(axis=axis)
        def grad_fn(g):
            return (np.ascontiguousarray(
                np.broadcast_to(np.expand_dims(g, axis), a.shape)),)
    return _make(out, "sum", (a,), grad_fn)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ValueError(f"mean: empty reduction over shape {a.shape}")
    return mul(tsum(a, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product. 1-D operands are promoted to matrices and the result
    squeezed back; higher-rank operands batch over leading axes (suffix
    rule: the smaller batch shape must suffix-match the larger)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError(f"matmul: scalar operand in {a.shape} @ {b.shape}")
    if a.ndim == 1:
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + (out.shape[-1],))
    if b.ndim == 1:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions disagree for {a.shape} @ {b.shape}")
    if not _suffix_compatible(a.shape[:-2], b.shape[:-2]):
        raise ValueError(f"matmul: batch dimensions disagree for {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _reduce_to(g @ np.swapaxes(bd, -1, -2), a.shape)
        if b.requires_grad:
            gb = _reduce_to(np.swapaxes(ad, -1, -2) @ g, b.shape)
        return ga, gb
    return _make(ad @ bd, "matmul", (a, b), grad_fn)


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of NCHW input with [F, C, k, k] filters.

    Accumulation over (channel, kernel row, kernel col) is strictly
    sequential per output cell, so the result is bit-identical to a naive
    quadruple loop that sums zero-padded terms in the same order. Keep it
    that way; do not swap in a GEMM/im2col path.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be [N, C, H, W], got {x.shape}")
    if w.ndim != 4:
        raise ValueError(f"conv2d: weight must be [F, C, k, k], got {w.shape}")
    n, c, h, wdt = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ValueError(f"conv2d: input channels {x.shape} do not match weight {w.shape}")
    if kh != kw:
        raise ValueError(f"conv2d: kernel must be square, got {w.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    k = kh
    hp, wp = h + 2 * padding, wdt + 2 * padding
    if k > hp or k > wp:
        raise ValueError(f"conv2d: kernel {w.shape} exceeds padded input "
                         f"{(n, c, hp, wp)}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    if padding:
        xp = np.zeros((n, c, hp, wp))
        xp[:, :, padding:padding + h, padding:padding + wdt] = x.data
    else:
        xp = x.data
    out = np.zeros((n, f, ho, wo))
    wd = w.data
    for ci in range(c):
        for ik in range(k):
            for jk in range(k):
                xs = xp[:, ci, ik:ik + stride * ho:stride, jk:jk + stride * wo:stride]
                out += xs[:, None, :, :] * wd[None, :, ci, ik, jk, None, None]

    def grad_fn(g):
        gx = gw = None
        if w.requires_grad:
            gw = np.zeros_like(wd)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        for ci in range(c):
            for ik in range(k):
                for jk in range(k):
                    if w.requires_grad:
                        xs = xp[:, ci, ik:ik + stride * ho:stride,
                                jk:jk + stride * wo:stride]
                        gw[:, ci, ik, jk] = np.tensordot(
                            g, xs, axes=([0, 2, 3], [0, 1, 2]))
                    if x.requires_grad:
                        gxp[:, ci, ik:ik + stride * ho:stride,
                            jk:jk + stride * wo:stride] += np.tensordot(
                            g, wd[:, ci, ik, jk], axes=([1], [0]))
        if x.requires_grad:
            gx = gxp[:, :, padding:padding + h, padding:padding + wdt] \
                if padding else gxp
        return gx, gw

    return _make(out, "conv2d", (x, w), grad_fn)


# ---------------------------------------------------------------------------
# indexing / segment ops


def gather(a, index, axis: int = 0) -> Tensor:
    """Select rows along axis 0; backward scatter-adds into the source."""
    a = as_tensor(a)
    if axis != 0:
        raise ValueError("gather: only axis 0 is supported")
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"gather: index must be 1-D, got shape {idx.shape}")
    if a.data.shape[0] == 0 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[0])):
        raise ValueError(f"gather: index out of range for shape {a.shape}")
    def grad_fn(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        return (buf,)
    return _make(a.data[idx], "gather", (a,), grad_fn)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of `a` into `num_segments` buckets keyed by segment_ids."""
    a = as_tensor(a)
    seg = np.asarray(segment_ids, dtype=np.intp)
    if seg.ndim != 1 or seg.shape[0] != a.shape[0]:
        raise ValueError(f"segment_sum: ids shape {seg.shape} does not match "
                         f"rows of {a.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ValueError(f"segment_sum: segment id out of range [0, {num_segments})")
    out = np.zeros((num_segments,) + a.shape[1:])
    np.add.at(out, seg, a.data)
    def grad_fn(g):
        return (np.ascontiguousarray(g[seg]),)
    return _make(out, "segment_sum", (a,), grad_fn)


def scale_rows(a, s) -> Tensor:
    """Multiply each row of a [R, D] tensor by the matching entry of s [R]."""
    a, s = as_tensor(a), as_tensor(s)
    if a.ndim != 2 or s.ndim != 1 or a.shape[0] != s.shape[0]:
        raise ValueError(f"scale_rows: incompatible shapes {a.shape} and {s.shape}")
    ad, sd = a.data, s.data
    def grad_fn(g):
        return g * sd[:, None], (g * ad).sum(axis=1)
    return _make(ad * sd[:, None], "scale_rows", (a, s), grad_fn)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy: logits must be [N, C], got {logits.shape}")
    if y.ndim != 1 or y.shape[0] != logits.shape[0]:
        raise ValueError(f"cross_entropy: labels shape {y.shape} does not match "
                         f"logits {logits.shape}")
    nclass = logits.shape[1]
    if y.size and (y.min() < 0 or y.max() >= nclass):
        raise ValueError(f"cross_entropy: label out of range [0, {nclass})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    n = z.shape[0]
    rows = np.arange(n)
    nll = lse[:, 0] - z[rows, y]
    def grad_fn(g):
        p = np.exp(z - lse)
        p[rows, y] -= 1.0
        return (g * p / n,)
    return _make(np.float64(nll.mean()), "cross_entropy", (logits,), grad_fn)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Reverse-accumulate d(loss)/d(t) into `.grad` of every tensor on the
    tape with requires_grad. Gradients add onto existing `.grad` values."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward: loss must be a Tensor")
    if loss.data.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")

    # Iterative reverse topological order (post-order DFS).
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in seen and (p.node is not None or p.requires_grad):
                    stack.append((p, False))

    grads: dict[int, Array] = {id(loss): np.ones(())}
    for t in reversed(topo):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad and t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
        if t.node is None:
            continue
        parent_grads = t.node.grad_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not (p.requires_grad or p.node is not None):
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
