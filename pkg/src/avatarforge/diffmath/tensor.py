"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array.  Operations link results to their inputs,
so the implicit computation record is the DAG of ``parents`` references,
built define-by-run and discarded after each optimization step.  Every
vector-Jacobian product is itself expressed with these same operations,
which makes gradients first-class graph nodes: differentiating through a
gradient (as needed for surface normals and the unit-gradient regularizer
of a signed distance field) is just another call to :func:`gradients`.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import DimensionError

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "gradients",
    "grad_arrays",
    "toposort",
    "add", "sub", "mul", "div", "neg", "matmul", "bmm",
    "tsum", "tmean", "broadcast_to", "reshape", "transpose",
    "getitem", "gather_rows", "scatter_rows", "concat", "flip", "cumsum",
    "exp", "log", "sin", "cos", "sqrt", "tabs", "relu", "softplus",
    "sigmoid", "tanh", "maximum", "minimum", "clip", "pow_const",
    "max_reduce", "min_reduce", "stop_gradient", "softmax",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense float64 array plus an optional link into the computation DAG."""

    __slots__ = ("data", "parents", "vjp", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents: tuple = ()
        self.vjp = None
        self.requires_grad = requires_grad

    # -- introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def tracked(self) -> bool:
        """True when this node participates in gradient computation."""
        return self.requires_grad or self.vjp is not None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tracked={self.tracked()})"

    # -- operator sugar -----------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __pow__(self, p):
        return pow_const(self, float(p))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if not axes:
            axes = None
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED:
        for p in parents:
            if p.requires_grad or p.vjp is not None:
                out.parents = parents
                out.vjp = vjp
                break
    return out


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcasted gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    if g.shape != shape:
        raise DimensionError(f"cannot reduce gradient {g.shape} to {shape}")
    return g


# -- arithmetic --------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape),
                            _unbroadcast(neg(g), b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(mul(g, b), a.shape),
                            _unbroadcast(mul(g, a), b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = _unbroadcast(div(g, b), a.shape)
        gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb
    return _node(a.data / b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (neg(g),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b),
                 lambda g: (matmul(g, transpose(b, None)),
                            matmul(transpose(a, None), g)))


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over identical leading dimensions (no broadcasting)."""
    if a.ndim < 3 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"bmm shape mismatch: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"bmm inner mismatch: {a.shape} @ {b.shape}")
    return _node(np.matmul(a.data, b.data), (a, b),
                 lambda g: (bmm(g, _swap_last(b)), bmm(_swap_last(a), g)))


def _swap_last(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


# -- reductions & shaping ----------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is None:
            return (broadcast_to(reshape(g, (1,) * x.ndim), x.shape),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % x.ndim for a in axes)
        if not keepdims:
            kshape = tuple(1 if i in axes else s for i, s in enumerate(x.shape))
            g = reshape(g, kshape)
        return (broadcast_to(g, x.shape),)
    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), vjp)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for a in axes:
            n *= x.shape[a % x.ndim]
    return mul(tsum(x, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    return _node(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (_unbroadcast(g, x.shape),))


def reshape(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    return _node(x.data.reshape(shape), (x,),
                 lambda g: (reshape(g, x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,),
                 lambda g: (transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    if np.isscalar(out):
        out = np.asarray(out)
    return _node(out.copy(), (x,), lambda g: (_embed(g, idx, x.shape),))


def _embed(g: Tensor, idx, shape) -> Tensor:
    """Adjoint of getitem: place ``g`` into a zero array of ``shape``."""
    def fwd(garr):
        z = np.zeros(shape)
        np.add.at(z, idx, garr)
        return z
    return _node(fwd(g.data), (g,), lambda gg: (getitem(gg, idx),))


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.intp)
    return _node(x.data[index], (x,), lambda g: (_scatter_add(g, index, x.shape),))


def _scatter_add(g: Tensor, index: np.ndarray, shape) -> Tensor:
    z = np.zeros(shape)
    np.add.at(z, index, g.data)
    return _node(z, (g,), lambda gg: (gather_rows(gg, index),))


def scatter_rows(base: Tensor, index: np.ndarray, values: Tensor) -> Tensor:
    """Copy of ``base`` with ``base[index] = values`` (indices must be unique)."""
    index = np.asarray(index, dtype=np.intp)
    out = base.data.copy()
    out[index] = values.data

    def vjp(g):
        mask = np.ones(base.shape[0], dtype=np.float64)
        mask[index] = 0.0
        gb = mul(g, Tensor(mask.reshape((-1,) + (1,) * (base.ndim - 1))))
        return gb, gather_rows(g, index)

    return _node(out, (base, values), vjp)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    offs = np.cumsum([0] + sizes)

    def vjp(g):
        outs = []
        for i, p in enumerate(parts):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(offs[i]), int(offs[i + 1]))
            outs.append(getitem(g, tuple(sl)))
        return tuple(outs)

    return _node(np.concatenate([p.data for p in parts], axis=axis),
                 tuple(parts), vjp)


def flip(x: Tensor, axis: int) -> Tensor:
    return _node(np.flip(x.data, axis=axis).copy(), (x,),
                 lambda g: (flip(g, axis),))


def cumsum(x: Tensor, axis: int) -> Tensor:
    return _node(np.cumsum(x.data, axis=axis), (x,),
                 lambda g: (flip(cumsum(flip(g, axis), axis), axis),))


# -- elementwise nonlinearities -----------------------------------------

def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data))
    if _GRAD_ENABLED and (x.requires_grad or x.vjp is not None):
        out.parents = (x,)
        out.vjp = lambda g: (mul(g, out),)
    return out


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (div(g, x),))


def sin(x: Tensor) -> Tensor:
    return _node(np.sin(x.data), (x,), lambda g: (mul(g, cos(x)),))


def cos(x: Tensor) -> Tensor:
    return _node(np.cos(x.data), (x,), lambda g: (neg(mul(g, sin(x))),))


def sqrt(x: Tensor) -> Tensor:
    """Square root with subgradient 0 at x = 0 (safe for exact zeros)."""
    root = np.sqrt(x.data)
    out = Tensor(root)
    if _GRAD_ENABLED and (x.requires_grad or x.vjp is not None):
        gate = Tensor((root > 0.0).astype(np.float64))
        out.parents = (x,)
        # Denominator routed through ``out`` so the VJP itself stays
        # differentiable away from zero; the gate kills the x = 0 entries.
        out.vjp = lambda g: (
            mul(div(g, mul(Tensor(2.0), maximum(out, Tensor(1e-150)))), gate),)
    return out


def tabs(x: Tensor) -> Tensor:
    return _node(np.abs(x.data), (x,),
                 lambda g: (mul(g, Tensor(np.sign(x.data))),))


def relu(x: Tensor) -> Tensor:
    return _node(np.maximum(x.data, 0.0), (x,),
                 lambda g: (mul(g, Tensor((x.data > 0.0).astype(np.float64))),))


def softplus(x: Tensor) -> Tensor:
    return _node(np.logaddexp(0.0, x.data), (x,),
                 lambda g: (mul(g, sigmoid(x)),))


def sigmoid(x: Tensor) -> Tensor:
    val = _expit(x.data)
    out = Tensor(val)
    if _GRAD_ENABLED and (x.requires_grad or x.vjp is not None):
        out.parents = (x,)
        out.vjp = lambda g: (mul(g, mul(out, sub(Tensor(1.0), out))),)
    return out


def tanh(x: Tensor) -> Tensor:
    val = np.tanh(x.data)
    out = Tensor(val)
    if _GRAD_ENABLED and (x.requires_grad or x.vjp is not None):
        out.parents = (x,)
        out.vjp = lambda g: (mul(g, sub(Tensor(1.0), mul(out, out))),)
    return out


def _expit(x: np.ndarray) -> np.ndarray:
    # 1/(1+e^-x) = (1 + tanh(x/2)) / 2: one stable vectorized call.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = (a.data >= b.data).astype(np.float64)

    def vjp(g):
        ga = _unbroadcast(mul(g, Tensor(mask)), a.shape)
        gb = _unbroadcast(mul(g, Tensor(1.0 - mask)), b.shape)
        return ga, gb

    return _node(np.maximum(a.data, b.data), (a, b), vjp)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = (a.data <= b.data).astype(np.float64)

    def vjp(g):
        ga = _unbroadcast(mul(g, Tensor(mask)), a.shape)
        gb = _unbroadcast(mul(g, Tensor(1.0 - mask)), b.shape)
        return ga, gb

    return _node(np.minimum(a.data, b.data), (a, b), vjp)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    gate = ((x.data >= lo) & (x.data <= hi)).astype(np.float64)
    return _node(np.clip(x.data, lo, hi), (x,),
                 lambda g: (mul(g, Tensor(gate)),))


def pow_const(x: Tensor, p: float) -> Tensor:
    return _node(x.data ** p, (x,),
                 lambda g: (mul(g, mul(Tensor(p), pow_const(x, p - 1.0))),))


def max_reduce(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return _minmax_reduce(x, axis, keepdims, np.max, np.argmax)


def min_reduce(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return _minmax_reduce(x, axis, keepdims, np.min, np.argmin)


def _minmax_reduce(x, axis, keepdims, redfn, argfn):
    axis = axis % x.ndim
    idx = argfn(x.data, axis=axis)
    onehot = np.zeros_like(x.data)
    np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis=axis)

    def vjp(g):
        if not keepdims:
            kshape = tuple(1 if i == axis else s for i, s in enumerate(x.shape))
            g = reshape(g, kshape)
        return (mul(broadcast_to(g, x.shape), Tensor(onehot)),)

    return _node(redfn(x.data, axis=axis, keepdims=keepdims), (x,), vjp)


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = sub(x, Tensor(np.max(x.data, axis=axis, keepdims=True)))
    e = exp(shifted)
    return div(e, tsum(e, axis=axis, keepdims=True))


# -- backward pass -------------------------------------------------------

def toposort(output: Tensor) -> list:
    """Nodes of the record reachable from ``output``, inputs before users."""
    order: list = []
    seen: set = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and (p.requires_grad or p.vjp is not None):
                stack.append((p, False))
    return order


def gradients(output: Tensor, wrt, grad_output: Tensor | None = None) -> list:
    """Gradient of a scalar ``output`` w.r.t. each tensor in ``wrt``.

    Results are graph-connected tensors, so they can appear inside a later
    loss and be differentiated again.  Unreachable entries come back as
    zero tensors of the matching shape.
    """
    if output.size != 1:
        raise DimensionError(
            f"backward requires a scalar loss node, got shape {output.shape}")
    if grad_output is None:
        grad_output = Tensor(np.ones(output.shape))
    order = toposort(output)
    slots: dict = {id(output): grad_output}
    keep = {id(w) for w in wrt}
    for node in reversed(order):
        g = slots.get(id(node))
        if g is None:
            continue
        if id(node) not in keep:
            del slots[id(node)]
        if node.vjp is None:
            continue
        pgrads = node.vjp(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not (p.requires_grad or p.vjp is not None):
                continue
            cur = slots.get(id(p))
            slots[id(p)] = pg if cur is None else add(cur, pg)
    return [slots.get(id(w)) or Tensor(np.zeros(w.shape)) for w in wrt]


def grad_arrays(output: Tensor, wrt) -> list:
    """Plain numpy gradients (detached), for optimizer steps."""
    return [g.data for g in gradients(output, wrt)]

