"""Loader and tape-recording executor for a subset of ONNX.

Models are parsed with the ``onnx`` package; execution maps each node onto
:mod:`stylestroke.tensor` / :mod:`stylestroke.nn` ops so gradients flow
back to the graph input.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from .. import tensor as T
from ..errors import InvalidShapeError, ParseError, UnsupportedOpError
from ..tensor import Tensor
from .base import ImageEncoder

SUPPORTED_OPS = frozenset({
    "Conv", "Relu", "Gelu", "Sigmoid", "Tanh", "MaxPool", "AveragePool", "GlobalAveragePool",
    "Gemm", "MatMul", "Add", "Sub", "Mul", "Div", "Softmax", "LayerNormalization",
    "BatchNormalization", "Reshape", "Transpose", "Concat", "Slice", "ReduceMean", "Flatten",
    "Identity", "Constant",
})


@dataclass
class Node:
    op_type: str
    inputs: list
    outputs: list
    attrs: dict
    name: str = ""


@dataclass
class EncoderGraph:
    nodes: list
    initializers: dict
    inputs: list  # [(name, dims)] with None for symbolic dims
    outputs: list
    opset: int = 17
    constants: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.constants = {
            k: (Tensor(v, dtype=v.dtype) if np.issubdtype(v.dtype, np.floating) else v)
            for k, v in self.initializers.items()
        }

    @property
    def value_names(self):
        names = [n for n, _ in self.inputs]
        for node in self.nodes:
            names.extend(o for o in node.outputs if o)
        return names


def load_onnx(path):
    try:
        import onnx
        from onnx import helper, numpy_helper
    except ImportError as exc:  # pragma: no cover
        raise ParseError("the 'onnx' package is required to load ONNX models") from exc
    try:
        model = onnx.load(os.fspath(path))
    except Exception as exc:
        raise ParseError(f"{path}: not a readable ONNX model ({exc})") from None
    g = model.graph
    for node in g.node:
        if node.domain not in ("", "ai.onnx") or node.op_type not in SUPPORTED_OPS:
            raise UnsupportedOpError(node.op_type, f"node {node.name!r}" if node.name else "")
    try:
        onnx.checker.check_model(model)
    except Exception as exc:
        raise ParseError(f"{path}: invalid ONNX model ({exc})") from None

    opset = next((o.version for o in model.opset_import if o.domain in ("", "ai.onnx")), 17)
    inits = {t.name: numpy_helper.to_array(t) for t in g.initializer}
    inputs = []
    for vi in g.input:
        if vi.name in inits:
            continue
        dims = [d.dim_value if d.HasField("dim_value") else None for d in vi.type.tensor_type.shape.dim]
        inputs.append((vi.name, dims))
    nodes = []
    for node in g.node:
        attrs = {}
        for a in node.attribute:
            v = helper.get_attribute_value(a)
            if isinstance(v, bytes):
                v = v.decode()
            elif a.type == onnx.AttributeProto.TENSOR:
                v = numpy_helper.to_array(v)
            attrs[a.name] = v
        nodes.append(Node(node.op_type, list(node.input), list(node.output), attrs, node.name))
    return EncoderGraph(nodes, inits, inputs, [o.name for o in g.output], opset)


# -- op implementations ----------------------------------------------------

def _ints(v):
    if isinstance(v, Tensor):
        v = v.data
    return [int(x) for x in np.asarray(v).ravel()]


def _t(v, like=None):
    if isinstance(v, Tensor):
        return v
    return Tensor(v, dtype=like.dtype if isinstance(like, Tensor) else None)


def _conv(node, args, opset):
    a = node.attrs
    if a.get("group", 1) != 1:
        raise UnsupportedOpError("Conv", "group != 1")
    if a.get("auto_pad", "NOTSET") not in ("NOTSET", "VALID"):
        raise UnsupportedOpError("Conv", f"auto_pad={a['auto_pad']}")
    x, w = args[0], args[1]
    b = args[2] if len(args) > 2 and args[2] is not None else None
    pads = a.get("pads", [0, 0, 0, 0])
    return nn.conv2d(x, w, b, stride=a.get("strides", [1, 1]), padding=pads, dilation=a.get("dilations", [1, 1]))


def _pool_common(node, name):
    a = node.attrs
    if a.get("ceil_mode", 0):
        raise UnsupportedOpError(name, "ceil_mode=1")
    if a.get("auto_pad", "NOTSET") not in ("NOTSET", "VALID"):
        raise UnsupportedOpError(name, f"auto_pad={a['auto_pad']}")
    k = a["kernel_shape"]
    return k, a.get("strides", [1] * len(k)), a.get("pads", [0, 0, 0, 0])


def _maxpool(node, args, opset):
    if len(node.outputs) > 1 and node.outputs[1]:
        raise UnsupportedOpError("MaxPool", "Indices output")
    k, s, p = _pool_common(node, "MaxPool")
    return nn.max_pool2d(args[0], k, s, p, dilation=node.attrs.get("dilations", [1, 1]))


def _avgpool(node, args, opset):
    k, s, p = _pool_common(node, "AveragePool")
    return nn.avg_pool2d(args[0], k, s, p, count_include_pad=bool(node.attrs.get("count_include_pad", 0)))


def _matmul(node, args, opset):
    a, b = args
    squeeze = []
    if a.ndim == 1:
        a = T.reshape(a, (1, -1))
        squeeze.append(-2)
    if b.ndim == 1:
        b = T.reshape(b, (-1, 1))
        squeeze.append(-1)
    out = T.matmul(a, b)
    if squeeze:
        shape = list(out.shape)
        for ax in sorted(squeeze):
            shape.pop(ax if ax == -1 else len(shape) - 2)
        out = T.reshape(out, tuple(shape))
    return out


def _gemm(node, args, opset):
    a = node.attrs
    A, B = args[0], args[1]
    if a.get("transA", 0):
        A = T.transpose(A)
    if a.get("transB", 0):
        B = T.transpose(B)
    out = T.matmul(A, B)
    alpha = a.get("alpha", 1.0)
    if alpha != 1.0:
        out = out * alpha
    if len(args) > 2 and args[2] is not None:
        c = _t(args[2], out)
        beta = a.get("beta", 1.0)
        out = out + (c * beta if beta != 1.0 else c)
    return out


def _softmax(node, args, opset):
    x = args[0]
    if opset >= 13:
        return nn.softmax(x, axis=node.attrs.get("axis", -1))
    axis = node.attrs.get("axis", 1) % x.ndim
    flat = T.reshape(x, (int(np.prod(x.shape[:axis])), -1))
    return T.reshape(nn.softmax(flat, axis=-1), x.shape)


def _layernorm(node, args, opset):
    if any(o for o in node.outputs[1:]):
        raise UnsupportedOpError("LayerNormalization", "mean/inv-std outputs")
    scale = args[1] if len(args) > 1 else None
    bias = args[2] if len(args) > 2 else None
    return nn.layer_norm(args[0], scale, bias, axis=node.attrs.get("axis", -1),
                         eps=node.attrs.get("epsilon", 1e-5))


def _batchnorm(node, args, opset):
    if node.attrs.get("training_mode", 0):
        raise UnsupportedOpError("BatchNormalization", "training_mode=1")
    x, scale, bias, mean, var = args[:5]
    return nn.batch_norm(x, scale, bias, mean, var, eps=node.attrs.get("epsilon", 1e-5))


def _reshape(node, args, opset):
    x, shape = args[0], _ints(args[1])
    if node.attrs.get("allowzero", 0):
        raise UnsupportedOpError("Reshape", "allowzero=1")
    shape = [x.shape[i] if s == 0 else s for i, s in enumerate(shape)]
    return T.reshape(x, tuple(shape))


def _slice(node, args, opset):
    x = args[0]
    if opset < 10:
        starts, ends = node.attrs["starts"], node.attrs["ends"]
        axes, steps = node.attrs.get("axes"), None
    else:
        starts, ends = _ints(args[1]), _ints(args[2])
        axes = _ints(args[3]) if len(args) > 3 and args[3] is not None else None
        steps = _ints(args[4]) if len(args) > 4 and args[4] is not None else None
    return T.slice_axes(x, starts, ends, axes, steps)


def _reduce_mean(node, args, opset):
    x = args[0]
    axes = node.attrs.get("axes")
    if axes is None and len(args) > 1 and args[1] is not None:
        axes = _ints(args[1])
    keep = bool(node.attrs.get("keepdims", 1))
    if not axes:
        if node.attrs.get("noop_with_empty_axes", 0):
            return x
        axes = None
    return T.reduce_mean(x, axes if axes is None else tuple(axes), keepdims=keep)


def _binary(fn):
    def run(node, args, opset):
        a, b = args
        return fn(_t(a, b), _t(b, a))
    return run


_OPS = {
    "Conv": _conv,
    "Relu": lambda n, a, o: T.relu(a[0]),
    "Gelu": lambda n, a, o: T.gelu(a[0], n.attrs.get("approximate", "none")),
    "Sigmoid": lambda n, a, o: T.sigmoid(a[0]),
    "Tanh": lambda n, a, o: T.tanh(a[0]),
    "MaxPool": _maxpool,
    "AveragePool": _avgpool,
    "GlobalAveragePool": lambda n, a, o: T.reduce_mean(a[0], (2, 3), keepdims=True),
    "Gemm": _gemm,
    "MatMul": _matmul,
    "Add": _binary(T.add),
    "Sub": _binary(T.sub),
    "Mul": _binary(T.mul),
    "Div": _binary(T.div),
    "Softmax": _softmax,
    "LayerNormalization": _layernorm,
    "BatchNormalization": _batchnorm,
    "Reshape": _reshape,
    "Transpose": lambda n, a, o: T.transpose(a[0], n.attrs.get("perm")),
    "Concat": lambda n, a, o: T.concat(a, axis=n.attrs["axis"]),
    "Slice": _slice,
    "ReduceMean": _reduce_mean,
    "Flatten": lambda n, a, o: nn.flatten(a[0], n.attrs.get("axis", 1)),
    "Identity": lambda n, a, o: a[0],
}


def _check_input(name, dims, value):
    if len(dims) != value.ndim:
        raise InvalidShapeError(f"input {name!r} expects rank {len(dims)}, got shape {value.shape}")
    for want, got in zip(dims, value.shape):
        if want not in (None, 0) and want != got:
            raise InvalidShapeError(f"input {name!r} expects shape {dims}, got {value.shape}")


def execute(graph, inputs, taps=()):
    """Run ``graph`` on ``{input name: Tensor}``; returns (outputs, tapped) dicts of Tensors."""
    env = dict(graph.constants)
    for name, dims in graph.inputs:
        if name not in inputs:
            raise InvalidShapeError(f"missing graph input {name!r}")
        value = T.as_tensor(inputs[name])
        _check_input(name, dims, value)
        env[name] = value
    for node in graph.nodes:
        if node.op_type == "Constant":
            value = node.attrs.get("value")
            if value is None:
                raise UnsupportedOpError("Constant", "only the 'value' attribute is supported")
            env[node.outputs[0]] = Tensor(value, dtype=value.dtype) if np.issubdtype(value.dtype, np.floating) else value
            continue
        args = [env[i] if i else None for i in node.inputs]
        while args and args[-1] is None:
            args.pop()
        env[node.outputs[0]] = _OPS[node.op_type](node, args, graph.opset)
    missing = [t for t in taps if t not in env]
    if missing:
        raise KeyError(f"unknown tap names: {missing}")
    return {o: env[o] for o in graph.outputs}, {t: env[t] for t in taps}


# -- encoder wrapper --------------------------------------------------------

def _default_taps(graph, size):
    """Last 4-d value at each of the first three spatial resolutions below the input's.

    1x1 maps (global pools) carry no spatial statistics and are skipped.
    """
    x = Tensor(np.zeros((1, 3, size, size), dtype=np.float32))
    with T.no_grad():
        _, tapped = execute(graph, {graph.inputs[0][0]: x}, taps=[o for n in graph.nodes for o in n.outputs[:1]])
    stages, seen = [], {}
    for name, v in tapped.items():
        if not isinstance(v, Tensor) or v.ndim != 4 or v.shape[-1] >= size or v.shape[-2] * v.shape[-1] == 1:
            continue
        res = v.shape[-2:]
        if res not in seen:
            stages.append(res)
        seen[res] = name
    return tuple(seen[r] for r in stages[:3])


class OnnxEncoder(ImageEncoder):
    """Image encoder backed by an ONNX graph plus a JSON metadata sidecar.

    The sidecar (``model.json`` next to ``model.onnx`` unless given) holds
    ``{"input_size": int, "mean": [3], "std": [3], "taps": [names]}``; all
    keys are optional.  The first graph output, flattened, is the embedding.
    """

    def __init__(self, model_path, metadata_path=None):
        self.path = os.fspath(model_path)
        self.graph = load_onnx(self.path)
        if metadata_path is None:
            candidate = os.path.splitext(self.path)[0] + ".json"
            metadata_path = candidate if os.path.exists(candidate) else None
        meta = {}
        if metadata_path is not None:
            with open(metadata_path) as fh:
                meta = json.load(fh)
        in_name, dims = self.graph.inputs[0]
        self.input_name = in_name
        self.fixed_batch = dims[0] == 1
        self.input_size = int(meta.get("input_size") or dims[-1] or 224)
        self.mean = tuple(meta.get("mean", (0.0, 0.0, 0.0)))
        self.std = tuple(meta.get("std", (1.0, 1.0, 1.0)))
        taps = meta.get("taps")
        self.taps = tuple(taps) if taps else _default_taps(self.graph, self.input_size)
        with T.no_grad():
            probe = self._run(Tensor(np.zeros((1, 3, self.input_size, self.input_size), np.float32)), ())[0]
        self.dim = int(np.prod(probe.shape[1:]))

    def __repr__(self):
        return f"OnnxEncoder({self.path!r})"

    def _run(self, x, taps):
        if self.fixed_batch and x.shape[0] > 1:
            parts = [self._run(x[i : i + 1], taps) for i in range(x.shape[0])]
            out = T.concat([p[0] for p in parts], axis=0)
            return out, {t: T.concat([p[1][t] for p in parts], axis=0) for t in taps}
        outs, tapped = execute(self.graph, {self.input_name: x}, taps)
        return outs[self.graph.outputs[0]], tapped

    def _embed_raw(self, x):
        out = self._run(x, ())[0]
        return T.reshape(out, (out.shape[0], -1))

    def _style_maps(self, x):
        _, tapped = self._run(x, self.taps)
        return [(t, tapped[t]) for t in self.taps]
