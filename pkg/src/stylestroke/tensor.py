"""Dense float tensors with a reverse-mode gradient tape.

Every op that touches a gradient-requiring input records a node holding its
parents and a closure mapping the output gradient to input gradients.  The
graph is rebuilt on every forward pass and dropped once ``backward`` returns.

Arrays are float32 unless a different default is selected with
:func:`default_dtype` (gradient checks run in float64).
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np
from scipy.special import erf, expit

from .errors import ContractError, DomainError, InvalidShapeError

_state = threading.local()


def get_default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def default_dtype(dtype):
    prev = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def is_grad_enabled():
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = np.array(data, dtype=dtype or get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    # -- operators ---------------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    # -- method forms ------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def min(self, axis=None, keepdims=False):
        return reduce_min(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = None
    if like is not None and np.issubdtype(like.dtype, np.floating):
        dtype = like.dtype
    return Tensor(x, dtype=dtype)


def _node(data, parents, backward):
    """Wrap an op result; record it on the tape if any parent needs gradients."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


def _binary(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    _broadcast_shape(a, b)
    return a, b


# -- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = _binary(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _binary(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _binary(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _binary(a, b)
    out = a.data / b.data

    def backward(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), backward)


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,))


def relu(a):
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def gelu(a, approximate="none"):
    x = a.data
    if approximate == "tanh":
        c = np.sqrt(2.0 / np.pi)
        inner = c * (x + 0.044715 * x**3)
        th = np.tanh(inner)
        out = 0.5 * x * (1.0 + th)

        def backward(g):
            dinner = c * (1.0 + 3 * 0.044715 * x**2)
            return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * dinner),)
    else:
        cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
        out = x * cdf

        def backward(g):
            pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
            return (g * (cdf + x * pdf),)

    return _node(out.astype(x.dtype, copy=False), (a,), backward)


def sigmoid(a):
    s = expit(a.data)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    t = np.tanh(a.data)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a):
    e = np.exp(a.data)
    return _node(e, (a,), lambda g: (g * e,))


def log(a):
    if np.any(a.data < 0):
        raise DomainError("log of negative input")
    with np.errstate(divide="ignore"):
        out = np.log(a.data)
    return _node(out, (a,), lambda g: (g / a.data,))


def sqrt(a):
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative input")
    out = np.sqrt(a.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, g / (2.0 * out), 0.0).astype(out.dtype, copy=False),)

    return _node(out, (a,), backward)


def power(a, p):
    if isinstance(p, Tensor):
        a, p = _binary(a, p)
        if np.any(a.data < 0):
            raise DomainError("power with tensor exponent needs a non-negative base")
        out = a.data**p.data

        def backward(g):
            ga = g * p.data * a.data ** (p.data - 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                gp = np.where(a.data > 0, g * out * np.log(np.where(a.data > 0, a.data, 1)), 0)
            return _unbroadcast(ga, a.shape), _unbroadcast(gp.astype(out.dtype), p.shape)

        return _node(out, (a, p), backward)

    a = as_tensor(a)
    p = float(p)
    if not p.is_integer() and np.any(a.data < 0):
        raise DomainError(f"non-integer power {p} of negative input")
    out = a.data**p
    return _node(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _binary(a, b)
    pick_a = a.data >= b.data

    def backward(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _node(np.where(pick_a, a.data, b.data), (a, b), backward)


def minimum(a, b):
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = _binary(a, b)
    pick_a = a.data <= b.data

    def backward(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _node(np.where(pick_a, a.data, b.data), (a, b), backward)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "power": power,
    "negate": neg,
}


def elementwise(op_kind, a, b=None):
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(a) if b is None else fn(a, b)


# -- linear algebra --------------------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes, numpy batch broadcasting elsewhere."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise InvalidShapeError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise InvalidShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise InvalidShapeError(f"batch dimensions differ: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), backward)


def linalg(op_kind, a, b):
    if op_kind not in ("matmul", "bmm", "batched_matmul"):
        raise ValueError(f"unknown linalg op {op_kind!r}")
    if op_kind != "matmul" and (a.ndim != 3 or b.ndim != 3):
        raise InvalidShapeError("batched matmul expects 3-d operands")
    return matmul(a, b)


# -- reductions ------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _expand_back(g, shape, axes, keepdims):
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    out = np.asarray(a.data.sum(axis=axes, keepdims=keepdims))

    def backward(g):
        return (np.array(_expand_back(g, a.shape, axes, keepdims)),)

    return _node(out, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = np.asarray(a.data.mean(axis=axes, keepdims=keepdims))

    def backward(g):
        return (np.array(_expand_back(g / count, a.shape, axes, keepdims)),)

    return _node(out, (a,), backward)


def _reduce_select(a, axis, keepdims, argfn):
    axes = _norm_axes(axis, a.ndim)
    kept = tuple(i for i in range(a.ndim) if i not in axes)
    perm = kept + axes
    xt = a.data.transpose(perm)
    kept_shape = xt.shape[: len(kept)]
    flat = xt.reshape(kept_shape + (-1,))
    if flat.shape[-1] == 0:
        raise InvalidShapeError("reduction over an empty axis")
    idx = argfn(flat, axis=-1)[..., None]
    out = np.take_along_axis(flat, idx, axis=-1)[..., 0]
    out_shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape)) if keepdims else kept_shape
    inv = np.argsort(perm)

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx, np.reshape(g, kept_shape)[..., None], axis=-1)
        return (gflat.reshape(xt.shape).transpose(inv),)

    return _node(np.asarray(out).reshape(out_shape), (a,), backward)


def reduce_max(a, axis=None, keepdims=False):
    """Max reduction; the gradient goes to the lowest flat index among ties."""
    return _reduce_select(a, axis, keepdims, np.argmax)


def reduce_min(a, axis=None, keepdims=False):
    return _reduce_select(a, axis, keepdims, np.argmin)


# -- shape manipulation ----------------------------------------------------

def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise InvalidShapeError(str(exc)) from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise InvalidShapeError(f"invalid permutation {axes} for {a.ndim}-d tensor")
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise InvalidShapeError(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return concat([expand_dims(t, axis) for t in tensors], axis=axis)


def expand_dims(a, axis):
    return reshape(a, np.expand_dims(a.data, axis).shape)


def _has_array_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def index(a, idx):
    """Numpy-style indexing (basic slices or integer arrays)."""
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.intp)
    try:
        out = a.data[idx]
    except IndexError as exc:
        raise InvalidShapeError(str(exc)) from None
    advanced = _has_array_index(idx)

    def backward(g):
        ga = np.zeros_like(a.data)
        if advanced:
            np.add.at(ga, idx, g)
        else:
            ga[idx] = g
        return (ga,)

    return _node(np.array(out), (a,), backward)


def slice_axes(a, starts, ends, axes=None, steps=None):
    """Slice ``a`` along ``axes`` (ONNX Slice semantics for in-range bounds)."""
    if axes is None:
        axes = range(len(starts))
    steps = steps if steps is not None else [1] * len(starts)
    sl = [slice(None)] * a.ndim
    for s, e, ax, st in zip(starts, ends, axes, steps):
        sl[ax % a.ndim] = slice(int(s), int(e), int(st))
    return index(a, tuple(sl))


def take(a, indices, axis=0):
    """Gather along one axis; repeated indices accumulate their gradients."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        ga = np.zeros_like(a.data)
        moved = np.moveaxis(ga, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (ga,)

    return _node(out, (a,), backward)


# -- backward --------------------------------------------------------------

def _topo_order(root):
    order, visited = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack_.append((p, False))
    return order


def backward(root, inputs=None):
    """Backpropagate from a scalar ``root``.

    Returns ``{leaf: gradient}`` for every gradient-requiring leaf reached.
    When ``inputs`` is given the map is keyed by exactly those tensors and
    any that the root does not depend on get zeros.  Leaf ``.grad``
    attributes are overwritten with the result.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    grads = {id(root): np.ones_like(root.data)}
    leaves = {}
    if root.requires_grad:
        for node in reversed(_topo_order(root)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                leaves[id(node)] = (node, g)
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    result = {}
    for node, g in leaves.values():
        g = np.asarray(g, dtype=node.dtype).reshape(node.shape)
        node.grad = g
        result[node] = g
    if inputs is not None:
        out = {}
        for t in inputs:
            g = result.get(t)
            if g is None:
                g = np.zeros_like(t.data)
                t.grad = g
            out[t] = g
        return out
    return result
