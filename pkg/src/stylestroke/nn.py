"""Convolutional-network and resampling ops on :class:`~stylestroke.tensor.Tensor`.

All image tensors use NCHW layout.  Padding arguments accept an int, a
``(pad_h, pad_w)`` pair, or ``(top, left, bottom, right)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidShapeError
from .tensor import (
    Tensor,
    _node,
    as_tensor,
    concat,
    reduce_max,
    reduce_mean,
    reduce_sum,
    reshape,
    slice_axes,
    sqrt,
    transpose,
)


def _pair(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise InvalidShapeError(f"expected a pair, got {v}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _pads(p):
    if isinstance(p, (tuple, list)):
        if len(p) == 2:
            return int(p[0]), int(p[1]), int(p[0]), int(p[1])
        if len(p) == 4:
            return tuple(int(x) for x in p)
        raise InvalidShapeError(f"padding must have 2 or 4 entries, got {p}")
    p = int(p)
    return p, p, p, p


def _out_extent(size, k, stride, dilation, pad_lo, pad_hi):
    span = dilation * (k - 1) + 1
    n = (size + pad_lo + pad_hi - span) // stride + 1
    if stride < 1 or k < 1 or n < 1:
        raise InvalidShapeError(
            f"kernel {k} (stride {stride}, dilation {dilation}) does not fit extent {size} "
            f"with padding ({pad_lo}, {pad_hi})"
        )
    return n


def _windows(xp, kh, kw, sh, sw, dh, dw, oh, ow):
    """(N, C, oh, ow, kh, kw) strided view of a padded input."""
    v = sliding_window_view(xp, (dh * (kh - 1) + 1, dw * (kw - 1) + 1), axis=(2, 3))
    return v[:, :, : sh * (oh - 1) + 1 : sh, : sw * (ow - 1) + 1 : sw, ::dh, ::dw]


def _scatter_windows(gcols, shape_p, kh, kw, sh, sw, dh, dw, oh, ow):
    """Adjoint of ``_windows``: sum (N, C, oh, ow, kh, kw) back onto the padded input."""
    gxp = np.zeros(shape_p, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i * dh : i * dh + sh * (oh - 1) + 1 : sh, j * dw : j * dw + sw * (ow - 1) + 1 : sw] += gcols[
                :, :, :, :, i, j
            ]
    return gxp


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise InvalidShapeError("conv2d expects 4-d input (NCHW) and weight (OCkk)")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise InvalidShapeError(f"input has {c} channels, kernel expects {ci}")
    sh, sw = _pair(stride)
    dh, dw = _pair(dilation)
    pt, pl, pb, pr = _pads(padding)
    oh = _out_extent(h, kh, sh, dh, pt, pb)
    ow = _out_extent(w, kw, sw, dw, pl, pr)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _windows(xp, kh, kw, sh, sw, dh, dw, oh, ow)
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise InvalidShapeError(f"bias shape {bias.shape} != ({o},)")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(g, weight.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        gxp = _scatter_windows(gcols, xp.shape, kh, kw, sh, sw, dh, dw, oh, ow)
        gx = gxp[:, :, pt : pt + h, pl : pl + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node(out, tuple(parents), backward)


def max_pool2d(x, kernel, stride=None, padding=0, dilation=1):
    """Max pooling; ties go to the lowest flat index inside each window."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise InvalidShapeError("max_pool2d expects NCHW input")
    n, c, h, w = x.shape
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    dh, dw = _pair(dilation)
    pt, pl, pb, pr = _pads(padding)
    oh = _out_extent(h, kh, sh, dh, pt, pb)
    ow = _out_extent(w, kw, sw, dw, pl, pr)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
    cols = _windows(xp, kh, kw, sh, sw, dh, dw, oh, ow).reshape(n, c, oh, ow, kh * kw)
    arg = np.argmax(cols, axis=-1)
    out = np.take_along_axis(cols, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        iy = np.arange(oh)[:, None] * sh + (arg // kw) * dh
        ix = np.arange(ow)[None, :] * sw + (arg % kw) * dw
        hp, wp = xp.shape[2], xp.shape[3]
        base = (np.arange(n * c) * hp * wp).reshape(n, c, 1, 1)
        flat = (base + iy * wp + ix).ravel()
        gxp = np.bincount(flat, weights=g.ravel(), minlength=n * c * hp * wp)
        gxp = gxp.reshape(n, c, hp, wp)[:, :, pt : pt + h, pl : pl + w]
        return (gxp.astype(x.dtype, copy=False),)

    return _node(np.ascontiguousarray(out), (x,), backward)


def avg_pool2d(x, kernel, stride=None, padding=0, count_include_pad=True):
    x = as_tensor(x)
    if x.ndim != 4:
        raise InvalidShapeError("avg_pool2d expects NCHW input")
    n, c, h, w = x.shape
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    pt, pl, pb, pr = _pads(padding)
    oh = _out_extent(h, kh, sh, 1, pt, pb)
    ow = _out_extent(w, kw, sw, 1, pl, pr)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _windows(xp, kh, kw, sh, sw, 1, 1, oh, ow)
    if count_include_pad:
        count = np.full((oh, ow), kh * kw, dtype=x.dtype)
    else:
        ones = np.pad(np.ones((1, 1, h, w), dtype=x.dtype), ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        count = _windows(ones, kh, kw, sh, sw, 1, 1, oh, ow).sum(axis=(-1, -2))[0, 0]
    out = cols.sum(axis=(-1, -2)) / count

    def backward(g):
        gc = np.broadcast_to((g / count)[..., None, None], (n, c, oh, ow, kh, kw))
        gxp = _scatter_windows(gc, xp.shape, kh, kw, sh, sw, 1, 1, oh, ow)
        return (gxp[:, :, pt : pt + h, pl : pl + w],)

    return _node(out.astype(x.dtype, copy=False), (x,), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (x,), backward)


def layer_norm(x, scale=None, bias=None, axis=-1, eps=1e-5):
    """Normalize over every axis from ``axis`` to the last one."""
    x = as_tensor(x)
    axes = tuple(range(axis % x.ndim, x.ndim))
    mu = reduce_mean(x, axes, keepdims=True)
    xc = x - mu
    var = reduce_mean(xc * xc, axes, keepdims=True)
    y = xc / sqrt(var + eps)
    if scale is not None:
        y = y * scale
    if bias is not None:
        y = y + bias
    return y


def batch_norm(x, scale, bias, mean, var, eps=1e-5):
    """Inference-mode batch normalization over channel axis 1."""
    x = as_tensor(x)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    scale, bias, mean, var = (reshape(as_tensor(t, like=x), shape) for t in (scale, bias, mean, var))
    return (x - mean) / sqrt(var + eps) * scale + bias


def reduce(op_kind, x, axis=None, keepdims=False):
    fns = {"mean": reduce_mean, "sum": reduce_sum, "max": reduce_max}
    return fns[op_kind](x, axis, keepdims)


def flatten(x, axis=1):
    lead = int(np.prod(x.shape[:axis])) if axis else 1
    return reshape(x, (lead, -1))


def grid_sample_bilinear(image, grid):
    """Bilinear resampling at normalized coordinates with border clamping.

    ``image`` is (N, C, H, W) or (C, H, W); ``grid`` is (N, Ho, Wo, 2) or
    (Ho, Wo, 2) holding (x, y) in [-1, 1] where -1 and 1 are the outer
    edges of the first and last pixels (pixel centers sit at
    ``(2i + 1) / size - 1``).  An image batch of 1 is shared across grids.
    Returns (N, C, Ho, Wo), or (C, Ho, Wo) for unbatched inputs.
    """
    image, grid = as_tensor(image), as_tensor(grid, like=image)
    if grid.shape[-1] != 2:
        raise InvalidShapeError(f"grid last dimension must be 2, got {grid.shape[-1]}")
    squeeze = image.ndim == 3 and grid.ndim == 3
    img = image.data[None] if image.ndim == 3 else image.data
    gd = grid.data[None] if grid.ndim == 3 else grid.data
    if img.ndim != 4 or gd.ndim != 4:
        raise InvalidShapeError("grid_sample expects (N,C,H,W) image and (N,Ho,Wo,2) grid")
    ni, c, h, w = img.shape
    n, oh, ow, _ = gd.shape
    if ni not in (1, n):
        raise InvalidShapeError(f"image batch {ni} incompatible with grid batch {n}")

    x = ((gd[..., 0] + 1.0) * w - 1.0) * 0.5
    y = ((gd[..., 1] + 1.0) * h - 1.0) * 0.5
    in_x = (x >= 0) & (x <= w - 1)
    in_y = (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (xc - x0).astype(img.dtype)[..., None]
    wy = (yc - y0).astype(img.dtype)[..., None]

    flat_img = img.transpose(0, 2, 3, 1).reshape(ni * h * w, c)
    base = (np.arange(n) * h * w).reshape(n, 1, 1) if ni == n else 0
    i00, i01 = base + y0 * w + x0, base + y0 * w + x1
    i10, i11 = base + y1 * w + x0, base + y1 * w + x1
    v00, v01, v10, v11 = flat_img[i00], flat_img[i01], flat_img[i10], flat_img[i11]
    top = v00 * (1 - wx) + v01 * wx
    bot = v10 * (1 - wx) + v11 * wx
    val = top * (1 - wy) + bot * wy
    out = np.ascontiguousarray(val.transpose(0, 3, 1, 2))
    if squeeze:
        out = out[0]

    def backward(g):
        gt = (g[None] if squeeze else g).transpose(0, 2, 3, 1)
        chan = np.arange(c)
        idx = np.concatenate([(k[..., None] * c + chan).ravel() for k in (i00, i01, i10, i11)])
        wts = np.concatenate(
            [
                (gt * ((1 - wx) * (1 - wy))).ravel(),
                (gt * (wx * (1 - wy))).ravel(),
                (gt * ((1 - wx) * wy)).ravel(),
                (gt * (wx * wy)).ravel(),
            ]
        )
        gimg = np.bincount(idx, weights=wts, minlength=ni * h * w * c).astype(img.dtype)
        gimg = gimg.reshape(ni, h, w, c).transpose(0, 3, 1, 2)
        if image.ndim == 3:
            gimg = gimg[0]
        # clamped samples are constant in the grid coordinate
        gx = (gt * ((v01 - v00) * (1 - wy) + (v11 - v10) * wy)).sum(axis=-1) * in_x * (0.5 * w)
        gy = (gt * (bot - top)).sum(axis=-1) * in_y * (0.5 * h)
        ggrid = np.stack([gx, gy], axis=-1).astype(gd.dtype)
        if grid.ndim == 3:
            ggrid = ggrid[0]
        return gimg, ggrid

    return _node(out, (image, grid), backward)


def identity_grid(height, width, batch=None, dtype=None):
    """Sampling grid hitting every pixel center of a (height, width) image."""
    xs = (2 * np.arange(width) + 1) / width - 1
    ys = (2 * np.arange(height) + 1) / height - 1
    gx, gy = np.meshgrid(xs, ys)
    grid = np.stack([gx, gy], axis=-1)
    if batch is not None:
        grid = np.broadcast_to(grid, (batch, height, width, 2))
    return grid.astype(dtype or np.float64)


def resize_bilinear(image, height, width):
    """Differentiable bilinear resize; exact identity when the size is unchanged."""
    image = as_tensor(image)
    if image.shape[-2:] == (height, width):
        return image
    grid = Tensor(identity_grid(height, width), dtype=image.dtype)
    if image.ndim == 4:
        grid = Tensor(np.broadcast_to(grid.data, (image.shape[0], height, width, 2)), dtype=image.dtype)
    return grid_sample_bilinear(image, grid)


_NN = {
    "conv2d": conv2d,
    "maxpool2d": max_pool2d,
    "avgpool2d": avg_pool2d,
    "softmax": softmax,
    "layernorm": layer_norm,
    "batchnorm": batch_norm,
    "reduce-mean": reduce_mean,
    "reduce-sum": reduce_sum,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "slice": slice_axes,
}


def nn(op_kind, x, *params, **kwargs):
    """Dispatch by op name, for callers that hold the name as data."""
    try:
        fn = _NN[op_kind]
    except KeyError:
        raise ValueError(f"unknown nn op {op_kind!r}") from None
    return fn(x, *params, **kwargs)
