"""Content loss, relaxed-EMD style loss and their weighted combination.

All losses take the rendered (3, H, W) raster as a tape tensor so that one
rasterization can feed both terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .augment import DEFAULT_VIEWS, augment_batch
from .encoders.features import MAX_FEATURES, sample_features
from .errors import DegenerateInputError, InvalidConfigError, InvalidShapeError
from .tensor import Tensor, as_tensor

LAMBDA_CONTENT = 1.0
LAMBDA_STYLE = 1.0


def cosine_similarity(a, b):
    """Cosine of the angle between two vectors (plain arrays or tensors)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise InvalidShapeError(f"cosine_similarity of shapes {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a.data), np.linalg.norm(b.data)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity of a zero vector")
    return (a * b).sum() / (T.sqrt((a * a).sum()) * T.sqrt((b * b).sum()))


def _unit_rows(x):
    """Rows scaled to unit length; all-zero rows stay zero (cosine 0 against anything)."""
    sq = (x * x).sum(axis=1, keepdims=True)
    zero = (sq.data == 0).astype(x.dtype)
    return x / T.sqrt(sq + Tensor(zero, dtype=x.dtype))


def remd(a, b):
    """Relaxed earth mover's distance between feature sets (M, C) and (N, C).

    Ground cost is ``1 - cos(a_i, b_j)``; the result is the larger of the
    two directed mean nearest-neighbour costs.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1] or a.shape[0] < 1 or b.shape[0] < 1:
        raise InvalidShapeError(f"remd needs (M, C) and (N, C) sets, got {a.shape} and {b.shape}")
    cost = 1.0 - T.matmul(_unit_rows(a), T.transpose(_unit_rows(b)))
    cost = T.maximum(cost, 0.0)  # roundoff can push cos just past 1
    forward = T.reduce_min(cost, axis=1).mean()
    reverse = T.reduce_min(cost, axis=0).mean()
    return T.maximum(forward, reverse)


def content_loss(image, text, encoder, n_aug=DEFAULT_VIEWS, rng=None, output_size=None, params=None):
    """Negative mean cosine similarity between augmented views and the text embedding.

    ``image`` is a (3, H, W) raster; views are ``output_size`` squares
    (default: the encoder input size).
    """
    text = np.asarray(text, dtype=np.float64).ravel()
    if text.size != encoder.dim:
        raise InvalidConfigError(f"text embedding has dimension {text.size}, encoder produces {encoder.dim}")
    norm = np.linalg.norm(text)
    if norm == 0:
        raise DegenerateInputError("text embedding is the zero vector")
    image = as_tensor(image)
    views = augment_batch(image, n_aug, rng, output_size or encoder.input_size, params=params)
    emb = encoder.embed(views)
    target = Tensor((text / norm)[:, None], dtype=emb.dtype)
    return -T.matmul(emb, target).mean()


def style_targets(style_image, extractor):
    """Tapped feature maps of the style image, computed once and off the tape."""
    with T.no_grad():
        return [(name, fmap.detach()) for name, fmap in extractor.style_features(style_image)]


def style_loss(image, style, extractor, m=MAX_FEATURES, rng=None):
    """Sum over tapped layers of REMD between drawing and style features.

    ``style`` is either the style image or the output of :func:`style_targets`.
    Both images are sampled at the same ``m`` locations per layer.
    """
    if not isinstance(style, list):
        style = style_targets(style, extractor)
    drawing_maps = extractor.style_features(image)
    drawn = sample_features(drawing_maps, m, rng)
    target = sample_features(style, m, coords=drawn.coords)
    total = None
    for (name, fa), (_, fb) in zip(drawn.layers, target.layers):
        term = remd(fa, fb)
        total = term if total is None else total + term
    return total


@dataclass
class LossReport:
    content: float
    style: float
    combined: float
    total: Tensor = None  # tape root for backward
    lambda_content: float = LAMBDA_CONTENT
    lambda_style: float = LAMBDA_STYLE


def check_weights(lambda_content, lambda_style):
    if lambda_content < 0 or lambda_style < 0 or not (math.isfinite(lambda_content) and math.isfinite(lambda_style)):
        raise InvalidConfigError("loss weights must be finite and non-negative")
    if lambda_content == 0 and lambda_style == 0:
        raise InvalidConfigError("at least one of lambda_content, lambda_style must be positive")


def combined_loss(image, text, style, encoder, extractor=None, lambda_content=LAMBDA_CONTENT,
                  lambda_style=LAMBDA_STYLE, n_aug=DEFAULT_VIEWS, m=MAX_FEATURES, aug_rng=None,
                  feature_rng=None):
    """Weighted sum of content and style losses on one tape.

    A term whose weight is zero is still reported but evaluated off the tape,
    so it contributes no gradient.
    """
    check_weights(lambda_content, lambda_style)
    extractor = extractor or encoder
    image = as_tensor(image)

    def term(weight, fn):
        if weight > 0:
            return fn()
        with T.no_grad():
            return fn()

    c = term(lambda_content, lambda: content_loss(image, text, encoder, n_aug, aug_rng))
    s = term(lambda_style, lambda: style_loss(image, style, extractor, m, feature_rng))
    parts = [w * t for w, t in ((lambda_content, c), (lambda_style, s)) if w > 0]
    total = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    cv, sv = float(c.item()), float(s.item())
    return LossReport(cv, sv, lambda_content * cv + lambda_style * sv, total, lambda_content, lambda_style)
