"""Soft-coverage differentiable rasterizer for Bezier brush strokes.

Each stroke's centerline is flattened to a polyline at fixed parameters
``t_i = i / K``.  A pixel's coverage is ``sigmoid((radius - d) / sigma)``
with ``d`` the distance from its center to the polyline; strokes are
composited back to front with the over operator:

    out = (1 - alpha * c) * under + alpha * c * rgb

:func:`rasterize` is a single tape op with a hand-written backward that
only visits pixels where a stroke's coverage is above the working
precision.  :func:`rasterize_reference` builds the same image from generic
tensor ops over every pixel; it is slow and exists for validation.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from . import tensor as T
from .scene import WHITE
from .tensor import Tensor, _node, as_tensor

DEFAULT_SEGMENTS = 32
DEFAULT_SIGMA = 1.0


def bernstein_matrix(segments, dtype=np.float64):
    """(K+1, 4) cubic Bernstein weights at t = i / K."""
    t = np.arange(segments + 1, dtype=np.float64) / segments
    s = 1.0 - t
    return np.stack([s**3, 3 * s * s * t, 3 * s * t * t, t**3], axis=1).astype(dtype)


def flatten_bezier(points, segments=DEFAULT_SEGMENTS):
    """Polyline of K+1 points on the cubic Bezier(s) with control ``points`` (..., 4, 2)."""
    if segments < 1:
        raise ValueError("segments must be >= 1")
    points = as_tensor(points)
    return T.matmul(Tensor(bernstein_matrix(segments), dtype=points.dtype), points)


def coverage(pixel_centers, points, radius, sigma=DEFAULT_SIGMA, segments=DEFAULT_SEGMENTS):
    """Soft coverage of ``pixel_centers`` (m, 2) by one stroke, as a tape expression.

    The nearest segment wins; ties go to the lower segment index.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    points, radius = as_tensor(points), as_tensor(radius)
    pix = as_tensor(pixel_centers, like=points)
    poly = flatten_bezier(points, segments)
    a = poly[:-1]
    d = poly[1:] - a
    dd = T.maximum((d * d).sum(axis=-1), np.finfo(points.dtype).tiny)
    pa = T.reshape(pix, (-1, 1, 2)) - a
    t = T.minimum(T.maximum((pa * d).sum(axis=-1) / dd, 0.0), 1.0)
    diff = pa - T.reshape(t, t.shape + (1,)) * d
    dist = T.sqrt(T.reduce_min((diff * diff).sum(axis=-1), axis=1))
    return T.sigmoid((radius - dist) / sigma)


def _pixel_grid(x0, x1, y0, y1, dtype):
    xs = np.arange(x0, x1, dtype=dtype) + 0.5
    ys = np.arange(y0, y1, dtype=dtype) + 0.5
    px, py = np.meshgrid(xs, ys)
    return np.stack([px.ravel(), py.ravel()], axis=1)


def _cull_margin(sigma, dtype):
    # beyond this distance past the edge the sigmoid is below machine epsilon
    return sigma * float(-np.log(np.finfo(dtype).eps))


@njit(cache=True)
def _forward_kernel(polys, radii, colors, img, boxes, offsets, sigma, tiny,
                    under, cov, seg, tpar, ex, ey, dist):
    n = polys.shape[0]
    nseg = polys.shape[1] - 1
    for s in range(n):
        x0, x1, y0, y1 = boxes[s, 0], boxes[s, 1], boxes[s, 2], boxes[s, 3]
        r = radii[s]
        alpha = colors[s, 3]
        idx = offsets[s]
        for y in range(y0, y1):
            py = y + 0.5
            for x in range(x0, x1):
                px = x + 0.5
                best = np.inf
                bk = 0
                bt = 0.0
                bx = 0.0
                by = 0.0
                for k in range(nseg):
                    ax = polys[s, k, 0]
                    ay = polys[s, k, 1]
                    dx = polys[s, k + 1, 0] - ax
                    dy = polys[s, k + 1, 1] - ay
                    dd = max(dx * dx + dy * dy, tiny)
                    pax = px - ax
                    pay = py - ay
                    t = min(max((pax * dx + pay * dy) / dd, 0.0), 1.0)
                    qx = pax - t * dx
                    qy = pay - t * dy
                    d2 = qx * qx + qy * qy
                    if d2 < best:
                        best = d2
                        bk = k
                        bt = t
                        bx = qx
                        by = qy
                d = np.sqrt(best)
                z = (r - d) / sigma
                if z >= 0:
                    c = 1.0 / (1.0 + np.exp(-z))
                else:
                    e = np.exp(z)
                    c = e / (1.0 + e)
                ac = alpha * c
                for ch in range(3):
                    u = img[ch, y, x]
                    under[ch, idx] = u
                    img[ch, y, x] = u + ac * (colors[s, ch] - u)
                cov[idx] = c
                seg[idx] = bk
                tpar[idx] = bt
                ex[idx] = bx
                ey[idx] = by
                dist[idx] = d
                idx += 1


@njit(cache=True)
def _backward_kernel(colors, g, boxes, offsets, sigma, under, cov, seg, tpar, ex, ey, dist,
                     g_poly, g_rad, g_col):
    n = boxes.shape[0]
    for s in range(n - 1, -1, -1):
        x0, x1, y0, y1 = boxes[s, 0], boxes[s, 1], boxes[s, 2], boxes[s, 3]
        alpha = colors[s, 3]
        idx = offsets[s]
        acc_r = 0.0
        acc_c0 = 0.0
        acc_c1 = 0.0
        acc_c2 = 0.0
        acc_a = 0.0
        for y in range(y0, y1):
            for x in range(x0, x1):
                c = cov[idx]
                ac = alpha * c
                g0 = g[0, y, x]
                g1 = g[1, y, x]
                g2 = g[2, y, x]
                g_ac = (g0 * (colors[s, 0] - under[0, idx]) + g1 * (colors[s, 1] - under[1, idx])
                        + g2 * (colors[s, 2] - under[2, idx]))
                acc_c0 += g0 * ac
                acc_c1 += g1 * ac
                acc_c2 += g2 * ac
                acc_a += g_ac * c
                g_z = g_ac * alpha * c * (1.0 - c) / sigma
                acc_r += g_z
                d = dist[idx]
                if d > 0:
                    # d(dist)/dQ = -(P - Q) / dist with the projection held fixed
                    gqx = g_z * ex[idx] / d
                    gqy = g_z * ey[idx] / d
                    k = seg[idx]
                    t = tpar[idx]
                    g_poly[s, k, 0] += gqx * (1.0 - t)
                    g_poly[s, k, 1] += gqy * (1.0 - t)
                    g_poly[s, k + 1, 0] += gqx * t
                    g_poly[s, k + 1, 1] += gqy * t
                keep = 1.0 - ac
                g[0, y, x] = g0 * keep
                g[1, y, x] = g1 * keep
                g[2, y, x] = g2 * keep
                idx += 1
        g_rad[s] = acc_r
        g_col[s, 0] = acc_c0
        g_col[s, 1] = acc_c1
        g_col[s, 2] = acc_c2
        g_col[s, 3] = acc_a


def _stroke_boxes(polys, radii, width, height, margin_extra):
    """Integer pixel boxes (x0, x1, y0, y1) outside which coverage is below precision."""
    margin = np.maximum(radii.astype(np.float64), 0.0) + margin_extra
    lo = polys.min(axis=1) - margin[:, None]
    hi = polys.max(axis=1) + margin[:, None]
    boxes = np.empty((len(radii), 4), dtype=np.int64)
    boxes[:, 0] = np.clip(np.floor(lo[:, 0]), 0, width)
    boxes[:, 1] = np.clip(np.ceil(hi[:, 0]), 0, width)
    boxes[:, 2] = np.clip(np.floor(lo[:, 1]), 0, height)
    boxes[:, 3] = np.clip(np.ceil(hi[:, 1]), 0, height)
    boxes[:, 1] = np.maximum(boxes[:, 1], boxes[:, 0])
    boxes[:, 3] = np.maximum(boxes[:, 3], boxes[:, 2])
    return boxes


def rasterize(trajectories, radii, colors, width, height, background=WHITE, sigma=DEFAULT_SIGMA,
              segments=DEFAULT_SEGMENTS):
    """Render stroke parameter tensors to a (3, H, W) image tensor."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    traj, rad, col = as_tensor(trajectories), as_tensor(radii), as_tensor(colors)
    dtype = np.result_type(traj.dtype, rad.dtype, col.dtype)
    bern = bernstein_matrix(segments, dtype)
    n = rad.shape[0]
    polys = np.ascontiguousarray(np.matmul(bern, traj.data.astype(dtype)))
    r = np.ascontiguousarray(rad.data, dtype=dtype)
    cols = np.ascontiguousarray(col.data, dtype=dtype)
    img = np.empty((3, height, width), dtype=dtype)
    img[:] = np.asarray(background, dtype=dtype)[:, None, None]
    boxes = _stroke_boxes(polys, r, width, height, _cull_margin(sigma, dtype))
    areas = (boxes[:, 1] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 2])
    offsets = np.concatenate([[0], np.cumsum(areas)]).astype(np.int64)
    total = int(offsets[-1])
    under = np.empty((3, total), dtype=dtype)
    cov, tpar, ex, ey, dist = (np.empty(total, dtype=dtype) for _ in range(5))
    seg = np.empty(total, dtype=np.int64)
    tiny = float(np.finfo(dtype).tiny)
    _forward_kernel(polys, r, cols, img, boxes, offsets, float(sigma), tiny, under, cov, seg, tpar, ex, ey, dist)

    def backward(g):
        g = np.array(g, dtype=dtype)
        g_poly = np.zeros((n, segments + 1, 2), dtype=np.float64)
        g_rad = np.zeros(n, dtype=np.float64)
        g_col = np.zeros((n, 4), dtype=np.float64)
        _backward_kernel(cols, g, boxes, offsets, float(sigma), under, cov, seg, tpar, ex, ey, dist,
                         g_poly, g_rad, g_col)
        g_traj = np.matmul(bern.T.astype(np.float64), g_poly)
        return (g_traj.astype(traj.dtype), g_rad.astype(rad.dtype), g_col.astype(col.dtype))

    return _node(img, (traj, rad, col), backward)


def rasterize_reference(trajectories, radii, colors, width, height, background=WHITE, sigma=DEFAULT_SIGMA,
                        segments=DEFAULT_SEGMENTS):
    """Same image as :func:`rasterize`, composed from tensor ops with no culling."""
    traj, rad, col = as_tensor(trajectories), as_tensor(radii), as_tensor(colors)
    pix = _pixel_grid(0, width, 0, height, traj.dtype)
    out = Tensor(np.broadcast_to(np.asarray(background)[:, None], (3, width * height)), dtype=traj.dtype)
    for s in range(rad.shape[0]):
        c = coverage(pix, traj[s], rad[s], sigma, segments)
        ac = col[s, 3] * c
        rgb = T.reshape(col[s, :3], (3, 1))
        out = out + ac * (rgb - out)
    return T.reshape(out, (3, height, width))


def render(drawing, sigma=DEFAULT_SIGMA, segments=DEFAULT_SEGMENTS):
    """Rasterize a :class:`~stylestroke.scene.Drawing` to a (3, H, W) numpy array."""
    pts, radii, colors = drawing.arrays()
    with T.no_grad():
        img = rasterize(pts, radii, colors, drawing.width, drawing.height, drawing.background, sigma, segments)
    return img.data
