"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is define-by-run: while a :class:`Tape` is active (used as a
context manager), every operation appends one node holding the indices of
its tracked parents and a closure that maps the upstream gradient to
parent gradients. Nodes are appended in execution order, so parents always
precede children and ``backward`` is a single reverse sweep over the list.

Tensors created outside a tape, or from plain arrays, act as constants:
they participate in forward arithmetic but receive no gradient. The tape
is rebuilt for every forward pass; nothing here caches global state, so
repeated forward passes with equal inputs are bit-identical.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import GraphError, ShapeError

_STACK: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _STACK[-1] if _STACK else None


class Tensor:
    """A dense float64 array, optionally tracked on a gradient tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = "" if self.node is None else f", node={self.node}"
        return f"Tensor(shape={self.data.shape}{tag})"


class Tape:
    """Gradient tape recording one node per operation.

    nodes[i] = (op id, parent node indices, vjp closure). Parent indices are
    always smaller than i, so the node list is topologically ordered by
    construction. ``gradients`` is populated by :meth:`backward`.
    """

    def __init__(self):
        self.nodes: list[tuple[str, tuple[int, ...], Callable | None]] = []
        self.gradients: list[np.ndarray | None] | None = None

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _STACK.pop()
        return False

    def watch(self, tensor: Tensor) -> Tensor:
        """Register a leaf tensor (parameter) so gradients accumulate into it."""
        if tensor.tape is self and tensor.node is not None:
            return tensor
        tensor.tape = self
        tensor.node = self._record("leaf", (), None)
        return tensor

    def _record(self, op: str, parents: tuple[int, ...], vjp: Callable | None) -> int:
        self.nodes.append((op, parents, vjp))
        return len(self.nodes) - 1

    def backward(self, root: Tensor) -> None:
        """Populate gradients of ``root`` w.r.t. every reachable node.

        ``root`` must be a scalar recorded on this tape. Unreached nodes keep
        gradient None and read back as zeros through :meth:`grad`.
        """
        if root.tape is not self or root.node is None:
            raise GraphError("backward root is not recorded on this tape")
        if root.data.size != 1:
            raise GraphError(f"backward root must be scalar, got shape {root.data.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[root.node] = np.ones_like(root.data)
        for idx in range(root.node, -1, -1):
            gout = grads[idx]
            if gout is None:
                continue
            _, parents, vjp = self.nodes[idx]
            if vjp is None:
                continue
            for parent, gpar in zip(parents, vjp(gout)):
                if gpar is None:
                    continue
                if grads[parent] is None:
                    grads[parent] = np.array(gpar, dtype=np.float64)
                else:
                    grads[parent] += gpar
        self.gradients = grads

    def grad(self, tensor: Tensor) -> np.ndarray:
        """Gradient of the last backward root w.r.t. ``tensor`` (zeros if unreached)."""
        if tensor.tape is not self or tensor.node is None:
            raise GraphError("tensor is not recorded on this tape")
        if self.gradients is None:
            raise GraphError("backward() has not run on this tape")
        g = self.gradients[tensor.node]
        if g is None:
            return np.zeros_like(tensor.data)
        return g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp_all: Callable) -> Tensor:
    """Wrap op output; record on the active tape when any input is tracked.

    ``vjp_all(g, need)`` returns one gradient per input, and may return None
    for entries whose ``need`` flag is False.
    """
    tape = _active_tape()
    out = Tensor(data)
    if tape is None:
        return out
    tracked = tuple(i for i, t in enumerate(inputs) if t.tape is tape and t.node is not None)
    if not tracked:
        return out
    need = tuple(i in tracked for i in range(len(inputs)))

    def vjp(g, _vjp_all=vjp_all, _need=need, _tracked=tracked):
        grads = _vjp_all(g, _need)
        return tuple(grads[i] for i in _tracked)

    out.tape = tape
    out.node = tape._record(op, tuple(inputs[i].node for i in tracked), vjp)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not match")


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g, need: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g, need: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g, need: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("div", a, b)
    ad, bd = a.data, b.data
    return _emit("div", ad / bd, (a, b),
                 lambda g, need: (g / bd, -g * ad / (bd * bd)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g, need: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g, need: (g * c,))


def add_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit("add_scalar", a.data + float(c), (a,), lambda g, need: (g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g, need: (g * out,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _emit("sqrt", out, (a,), lambda g, need: (g / (2.0 * out),))


def absolute(a) -> Tensor:
    # subgradient 0 at the kink
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _emit("abs", np.abs(a.data), (a,), lambda g, need: (g * sign,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g, need: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _emit("sigmoid", out, (a,), lambda g, need: (g * out * (1.0 - out),))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through inside the interval only."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _emit("clamp", np.clip(a.data, lo, hi), (a,), lambda g, need: (g * mask,))


# ---------------------------------------------------------------------------
# shape and reduction ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    in_shape = a.data.shape
    return _emit("reshape", a.data.reshape(shape), (a,),
                 lambda g, need: (g.reshape(in_shape),))


def transpose2d(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d expects a matrix, got shape {a.data.shape}")
    return _emit("transpose2d", a.data.T.copy(), (a,), lambda g, need: (g.T,))


def concat(a, b, axis: int = 1) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    split = a.data.shape[axis]

    def vjp(g, need, _axis=axis, _split=split):
        ga, gb = np.split(g, [_split], axis=_axis)
        return ga, gb

    return _emit("concat", np.concatenate([a.data, b.data], axis=axis), (a, b), vjp)


def tensor_sum(a) -> Tensor:
    a = as_tensor(a)
    in_shape = a.data.shape
    return _emit("sum", np.asarray(a.data.sum()), (a,),
                 lambda g, need: (np.broadcast_to(g, in_shape),))


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    in_shape = a.data.shape

    def vjp(g, need, _axis=axis, _shape=in_shape):
        return (np.broadcast_to(np.expand_dims(g, _axis), _shape),)

    return _emit("sum_axis", a.data.sum(axis=axis), (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} do not conform")
    return _emit("matmul", ad @ bd, (a, b),
                 lambda g, need: (g @ bd.T if need[0] else None,
                                  ad.T @ g if need[1] else None))


def add_bias(x, b) -> Tensor:
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.data.shape} and {b.data.shape} do not conform")
    return _emit("add_bias", x.data + b.data, (x, b),
                 lambda g, need: (g, g.sum(axis=0)))


def dense(x, weights, bias) -> Tensor:
    """Affine map out[b, j] = sum_i x[b, i] * weights[i, j] + bias[j]."""
    return add_bias(matmul(x, weights), bias)


def add_channel_bias(x, b) -> Tensor:
    """Add a per-channel bias b (C,) to a feature map x (B, C, spatial...)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim < 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_channel_bias: shapes {x.data.shape} and "
                         f"{b.data.shape} do not conform")
    view = b.data.reshape((1, -1) + (1,) * (x.data.ndim - 2))
    reduce_axes = (0,) + tuple(range(2, x.data.ndim))
    return _emit("add_channel_bias", x.data + view, (x, b),
                 lambda g, need: (g, g.sum(axis=reduce_axes)))


# ---------------------------------------------------------------------------
# convolutions (valid, no padding; 2 or 3 spatial dims)

def _offset_slices(offset, out_sp, stride):
    return tuple(slice(d, d + stride * (o - 1) + 1, stride)
                 for d, o in zip(offset, out_sp))


def _conv_raw(x: np.ndarray, k: np.ndarray, stride: int) -> np.ndarray:
    out_sp = tuple((i - n) // stride + 1 for i, n in zip(x.shape[2:], k.shape[2:]))
    y = np.zeros((x.shape[0], k.shape[0]) + out_sp)
    head = (slice(None), slice(None))
    for off in np.ndindex(*k.shape[2:]):
        view = x[head + _offset_slices(off, out_sp, stride)]
        y += np.einsum("kc,bc...->bk...", k[head + off], view)
    return y


def _conv_transpose_raw(y: np.ndarray, k: np.ndarray, stride: int,
                        in_sp: tuple[int, ...] | None = None) -> np.ndarray:
    # exact adjoint of _conv_raw with respect to its input
    out_sp = y.shape[2:]
    if in_sp is None:
        in_sp = tuple(stride * (o - 1) + n for o, n in zip(out_sp, k.shape[2:]))
    x = np.zeros((y.shape[0], k.shape[1]) + tuple(in_sp))
    head = (slice(None), slice(None))
    for off in np.ndindex(*k.shape[2:]):
        x[head + _offset_slices(off, out_sp, stride)] += np.einsum(
            "kc,bk...->bc...", k[head + off], y)
    return x


def _conv_kernel_grad(big: np.ndarray, small: np.ndarray, stride: int,
                      ksp: tuple[int, ...]) -> np.ndarray:
    # big: array indexed by strided windows (B, C, in); small: (B, K, out)
    out_sp = small.shape[2:]
    gk = np.empty((small.shape[1], big.shape[1]) + ksp)
    head = (slice(None), slice(None))
    flat_small = small.reshape(small.shape[0], small.shape[1], -1)
    for off in np.ndindex(*ksp):
        view = big[head + _offset_slices(off, out_sp, stride)]
        flat_view = view.reshape(view.shape[0], view.shape[1], -1)
        gk[head + off] = np.einsum("bkx,bcx->kc", flat_small, flat_view)
    return gk


def _check_conv_args(op: str, x: Tensor, kernel: Tensor, stride: int) -> None:
    if x.data.ndim not in (4, 5):
        raise ShapeError(f"{op}: input must have 2 or 3 spatial dims, got shape {x.data.shape}")
    if kernel.data.ndim != x.data.ndim:
        raise ShapeError(f"{op}: kernel rank {kernel.data.ndim} does not match "
                         f"input rank {x.data.ndim}")
    if stride < 1:
        raise ShapeError(f"{op}: stride must be >= 1, got {stride}")


def conv(x, kernel, stride: int = 1) -> Tensor:
    """Valid cross-correlation of (B, C, spatial...) with kernel (K, C, kspatial...)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_args("conv", x, kernel, stride)
    if kernel.data.shape[1] != x.data.shape[1]:
        raise ShapeError(f"conv: kernel channels {kernel.data.shape} do not match "
                         f"input {x.data.shape}")
    if any(kn > xn for kn, xn in zip(kernel.data.shape[2:], x.data.shape[2:])):
        raise ShapeError(f"conv: kernel {kernel.data.shape} larger than input {x.data.shape}")
    xd, kd = x.data, kernel.data
    ksp = kd.shape[2:]
    in_sp = xd.shape[2:]

    def vjp(g, need):
        gx = _conv_transpose_raw(g, kd, stride, in_sp=in_sp) if need[0] else None
        gk = _conv_kernel_grad(xd, g, stride, ksp) if need[1] else None
        return gx, gk

    return _emit("conv", _conv_raw(xd, kd, stride), (x, kernel), vjp)


def conv_transpose(x, kernel, stride: int = 1) -> Tensor:
    """Adjoint of :func:`conv`: maps (B, K, spatial...) to (B, C, (in-1)*stride + k)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_args("conv_transpose", x, kernel, stride)
    if kernel.data.shape[0] != x.data.shape[1]:
        raise ShapeError(f"conv_transpose: kernel {kernel.data.shape} does not match "
                         f"input channels {x.data.shape}")
    xd, kd = x.data, kernel.data
    ksp = kd.shape[2:]

    def vjp(g, need):
        gx = _conv_raw(g, kd, stride) if need[0] else None
        gk = _conv_kernel_grad(g, xd, stride, ksp) if need[1] else None
        return gx, gk

    return _emit("conv_transpose", _conv_transpose_raw(xd, kd, stride), (x, kernel), vjp)
