"""Random crop + perspective augmentation applied to rasters before image encoding.

Coordinates here are normalized to the unit square, (0, 0) being the
top-left corner of the image and (1, 1) the bottom-right one.  A parameter
draw describes a map from output coordinates to source coordinates: the
output square is first warped by the homography sending the unit-square
corners to their displaced positions, then placed inside the crop box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ResampleDegenerateError
from .nn import grid_sample_bilinear
from .tensor import Tensor, as_tensor

SCALE_RANGE = (0.7, 0.9)
DISTORTION = 0.5
DEFAULT_VIEWS = 4
DEFAULT_OUTPUT_SIZE = 224

# top-left, top-right, bottom-right, bottom-left
UNIT_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@dataclass(frozen=True)
class AugmentParams:
    crop_center: tuple
    crop_scale: float
    corner_offsets: np.ndarray  # (4, 2) displacement of each unit-square corner
    output_size: int = DEFAULT_OUTPUT_SIZE

    @classmethod
    def identity(cls, output_size=DEFAULT_OUTPUT_SIZE):
        return cls((0.5, 0.5), 1.0, np.zeros((4, 2)), output_size)


def sample_params(rng, output_size=DEFAULT_OUTPUT_SIZE, scale_range=SCALE_RANGE, distortion=DISTORTION):
    scale = rng.uniform(*scale_range)
    cx, cy = rng.uniform(scale / 2, 1 - scale / 2, size=2)
    offsets = rng.uniform(-distortion / 2, distortion / 2, size=(4, 2))
    return AugmentParams((float(cx), float(cy)), float(scale), offsets, int(output_size))


def _square_to_quad(corners):
    """Homography taking the unit-square corners onto ``corners`` (4, 2)."""
    rows, rhs = [], []
    for (u, v), (x, y) in zip(UNIT_CORNERS, corners):
        rows.append([u, v, 1, 0, 0, 0, -u * x, -v * x])
        rows.append([0, 0, 0, u, v, 1, -u * y, -v * y])
        rhs.extend([x, y])
    try:
        h = np.linalg.solve(np.array(rows), np.array(rhs))
    except np.linalg.LinAlgError:
        raise ResampleDegenerateError("corner layout admits no homography") from None
    return np.append(h, 1.0).reshape(3, 3)


def _check_convex(corners):
    edges = np.roll(corners, -1, axis=0) - corners
    cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
    if not (np.all(cross > 0) or np.all(cross < 0)):
        raise ResampleDegenerateError("displaced corners do not form a convex quadrilateral")


def homography(p):
    """3x3 map from output unit-square coordinates to source unit-square coordinates."""
    corners = UNIT_CORNERS + np.asarray(p.corner_offsets, dtype=np.float64)
    _check_convex(corners)
    warp = _square_to_quad(corners)
    s = p.crop_scale
    cx, cy = p.crop_center
    crop = np.array([[s, 0.0, cx - s / 2], [0.0, s, cy - s / 2], [0.0, 0.0, 1.0]])
    return crop @ warp


def sampling_grid(p):
    """(S, S, 2) grid in [-1, 1] coordinates for :func:`grid_sample_bilinear`."""
    size = p.output_size
    c = (np.arange(size) + 0.5) / size
    u, v = np.meshgrid(c, c)
    pts = np.stack([u, v, np.ones_like(u)], axis=-1) @ homography(p).T
    if np.any(pts[..., 2] <= 0):
        raise ResampleDegenerateError("homography maps part of the output to infinity")
    xy = pts[..., :2] / pts[..., 2:]
    return 2.0 * xy - 1.0


def apply(img, p):
    """Warp a (3, H, W) raster; differentiable with respect to the pixels."""
    img = as_tensor(img)
    return grid_sample_bilinear(img, Tensor(sampling_grid(p), dtype=img.dtype))


def augment_batch(img, n=DEFAULT_VIEWS, rng=None, output_size=DEFAULT_OUTPUT_SIZE, params=None):
    """Stack of ``n`` independently augmented views, shape (n, 3, S, S).

    Parameters are drawn in order from the one ``rng`` stream; pass
    ``params`` to bypass sampling.
    """
    img = as_tensor(img)
    if params is None:
        if n < 1:
            raise ValueError("n must be >= 1")
        params = [sample_params(rng, output_size) for _ in range(n)]
    grids = np.stack([sampling_grid(p) for p in params])
    return grid_sample_bilinear(img[None], Tensor(grids, dtype=img.dtype))
