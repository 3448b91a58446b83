"""Dense float64 tensors with reverse-mode autodiff on a define-by-run tape.

Storage is a numpy array; every differentiable primitive records a node on
the tape of its inputs. Tensors without a tape are plain immutable values
and all ops degrade to eager numpy on them.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "add", "sub", "mul", "div", "exp", "log", "softplus", "tanh", "relu",
    "negate", "scale", "clamp", "sigmoid",
    "matmul", "conv2d", "resample", "concat", "reshape", "slice_axis",
    "sum_all", "backward",
]


class Tape:
    """Ordered record of primitive ops; parents always precede children."""

    def __init__(self):
        self.nodes = []

    def leaf(self, data) -> "Tensor":
        """Attach an array as a differentiable leaf."""
        t = Tensor(data, tape=self)
        t.node_id = len(self.nodes)
        self.nodes.append(_Node(parents=(), backward=None, tensor=t))
        return t

    def _record(self, out: "Tensor", parents, backward) -> "Tensor":
        # unattached parents keep a -1 slot so backward tuples stay aligned
        out.tape = self
        out.node_id = len(self.nodes)
        ids = tuple(p.node_id if p.tape is self else -1 for p in parents)
        self.nodes.append(_Node(parents=ids, backward=backward, tensor=out))
        return out


class _Node:
    __slots__ = ("parents", "backward", "tensor")

    def __init__(self, parents, backward, tensor):
        self.parents = parents
        self.backward = backward
        self.tensor = tensor


class Tensor:
    """Immutable n-d float64 value, optionally attached to a Tape."""

    __slots__ = ("data", "tape", "node_id", "grad")

    def __init__(self, data, tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = None
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tape={'yes' if self.tape else 'no'})"

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return negate(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors):
    tapes = {t.tape for t in tensors if t.tape is not None}
    if len(tapes) > 1:
        raise ValueError("operands attached to different tapes")
    return tapes.pop() if tapes else None


def _make(data, parents, backward):
    out = Tensor(data)
    tape = _tape_of(*parents)
    if tape is not None:
        tape._record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to `shape`, inverting numpy trailing-dim broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ------------------------------------------------------------------
# elementwise primitives
# ------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("div by zero entry")

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), bw)


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive entry")

    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw)


def softplus(a: Tensor) -> Tensor:
    a = _wrap(a)
    # stable form: max(x,0) + log1p(exp(-|x|))
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def bw(g):
        return (g / (1.0 + np.exp(-a.data)),)

    return _make(out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bw)


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bw)


def negate(a: Tensor) -> Tensor:
    a = _wrap(a)

    def bw(g):
        return (-g,)

    return _make(-a.data, (a,), bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not a tensor)."""
    a = _wrap(a)
    c = float(c)

    def bw(g):
        return (g * c,)

    return _make(a.data * c, (a,), bw)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clamp; gradient passes through the interior, zero outside."""
    a = _wrap(a)
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * mask,)

    return _make(np.clip(a.data, lo, hi), (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, composed so 1/(1+e^-x) and its grad stay stable."""
    a = _wrap(a)
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw)


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_ELEMENTWISE_UNARY = {
    "exp": exp, "log": log, "softplus": softplus, "tanh": tanh,
    "relu": relu, "negate": negate,
}


def elementwise(op_kind: str, a: Tensor, b=None, constant=None) -> Tensor:
    """Dispatch an elementwise op by name (binary, unary, or scale-by-constant)."""
    if op_kind == "scale-by-constant":
        return scale(a, constant)
    if op_kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return _ELEMENTWISE_BINARY[op_kind](a, b)
    if op_kind in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[op_kind](a)
    raise ValueError(f"unknown elementwise kind: {op_kind}")


# ------------------------------------------------------------------
# linear algebra / shape ops
# ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bw)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = _wrap(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    a = _wrap(a)
    shp = a.shape

    def bw(g):
        return (np.broadcast_to(g, shp).astype(np.float64),)

    return _make(a.data.sum(), (a,), bw)


# ------------------------------------------------------------------
# convolution and resampling
# ------------------------------------------------------------------

def _shift_views(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    """One (B,C,Ho,Wo) strided view of the padded input per kernel offset."""
    views = {}
    for i in range(kh):
        for j in range(kw):
            views[(i, j)] = xp[:, :, i:i + (ho - 1) * stride + 1:stride,
                               j:j + (wo - 1) * stride + 1:stride]
    return views


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation with zero padding.

    x: (C_in,H,W) or batched (B,C_in,H,W); w: (C_out,C_in,kh,kw).
    Computed as kh*kw shift-accumulated batched GEMMs, which stays
    BLAS-bound without materializing im2col buffers.
    """
    x, w = _wrap(x), _wrap(w)
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    b, ci, h, wd_ = xd.shape
    co, ci_w, kh, kw = w.shape
    if ci != ci_w:
        raise ValueError(f"conv2d channel mismatch: input {ci}, kernel {ci_w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    hp, wp = h + 2 * padding, wd_ + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError("kernel larger than padded input")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    if padding:
        xpad = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xpad = xd
    views = _shift_views(xpad, kh, kw, stride, ho, wo)
    # contiguous (Co,Ci) weight slices; strided operands knock BLAS off the fast path
    wslices = {ij: np.ascontiguousarray(w.data[:, :, ij[0], ij[1]]) for ij in views}
    out = np.zeros((b, co, ho * wo))
    for ij, v in views.items():
        # (Co,Ci) @ (B,Ci,Ho*Wo) -> (B,Co,Ho*Wo)
        out += np.matmul(wslices[ij], v.reshape(b, ci, ho * wo))
    out = out.reshape(b, co, ho, wo)

    def bw(g):
        gd = g if batched else g[None]
        gflat = np.ascontiguousarray(gd.reshape(b, co, ho * wo))
        dw = np.empty((co, ci, kh, kw))
        dxp = np.zeros_like(xpad)
        dviews = _shift_views(dxp, kh, kw, stride, ho, wo)
        for (i, j), v in views.items():
            vf = v.reshape(b, ci, ho * wo)
            # sum_b (B,Co,HW) @ (B,HW,Ci) -> (Co,Ci)
            dw[:, :, i, j] = np.matmul(gflat, vf.transpose(0, 2, 1)).sum(axis=0)
            dv = np.matmul(wslices[(i, j)].T, gflat)  # (B,Ci,HW)
            dviews[(i, j)] += dv.reshape(b, ci, ho, wo)
        dx = dxp[:, :, padding:padding + h, padding:padding + wd_] if padding else dxp
        return (dx if batched else dx[0]), dw

    return _make(out if batched else out[0], (x, w), bw)


def resample(x: Tensor, factor: int, direction: str) -> Tensor:
    """Mean-pool down or nearest-neighbor up by an integer factor.

    Works on (...,H,W); down requires H and W divisible by factor.
    """
    x = _wrap(x)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        def bw_id(g):
            return (g,)
        return _make(x.data.copy(), (x,), bw_id)
    lead = x.shape[:-2]
    h, w = x.shape[-2], x.shape[-1]
    if direction == "down":
        if h % factor or w % factor:
            raise ValueError(f"extents {h}x{w} not divisible by {factor}")
        out = x.data.reshape(*lead, h // factor, factor, w // factor, factor)
        out = out.mean(axis=(-3, -1))

        def bw(g):
            g = g[..., :, None, :, None] / (factor * factor)
            g = np.broadcast_to(g, (*lead, h // factor, factor, w // factor, factor))
            return (g.reshape(*lead, h, w),)

        return _make(out, (x,), bw)
    if direction == "up":
        out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)

        def bw(g):
            g = g.reshape(*lead, h, factor, w, factor)
            return (g.sum(axis=(-3, -1)),)

        return _make(out, (x,), bw)
    raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")


# ------------------------------------------------------------------
# backward pass
# ------------------------------------------------------------------

def backward(tape: Tape, root: Tensor) -> dict:
    """Reverse sweep from a scalar root; fills .grad on leaves.

    Returns a map node_id -> gradient array for every visited node.
    """
    if root.tape is not tape or root.node_id is None:
        raise ValueError("root is not attached to this tape")
    if root.data.size != 1:
        raise ValueError(f"root must be scalar, has shape {root.shape}")

    grads = {root.node_id: np.ones(root.data.shape)}
    for nid in range(root.node_id, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.backward is None:
            continue
        parent_grads = node.backward(g)
        for pid, pg in zip(node.parents, parent_grads):
            if pid < 0:
                continue
            if pid in grads:
                grads[pid] += pg
            else:
                grads[pid] = np.array(pg, dtype=np.float64, copy=True)
    for nid in range(root.node_id + 1):
        node = tape.nodes[nid]
        if node.backward is None:  # leaf
            node.tensor.grad = grads.get(nid, np.zeros(node.tensor.shape))
            grads.setdefault(nid, node.tensor.grad)
    return grads
