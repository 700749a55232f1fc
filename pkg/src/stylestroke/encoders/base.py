from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..nn import resize_bilinear
from ..tensor import Tensor, as_tensor


def l2_normalize(x, axis=-1):
    """Rows scaled to unit length (zero rows stay zero)."""
    norm = T.sqrt((x * x).sum(axis=axis, keepdims=True) + np.finfo(x.dtype).tiny)
    return x / norm


class ImageEncoder:
    """Shared preprocessing for image encoders.

    Subclasses implement ``_embed_raw`` (N, 3, S, S) -> (N, D) and
    ``_style_maps`` (N, 3, S, S) -> [(name, (N, C, h, w))] on normalized input.
    """

    input_size: int = 224
    mean = (0.5, 0.5, 0.5)
    std = (0.5, 0.5, 0.5)
    dim: int = 0
    taps: tuple = ()

    def preprocess(self, images):
        images = as_tensor(images)
        if images.ndim == 3:
            images = T.expand_dims(images, 0)
        images = resize_bilinear(images, self.input_size, self.input_size)
        mean = np.asarray(self.mean, dtype=images.dtype).reshape(1, 3, 1, 1)
        std = np.asarray(self.std, dtype=images.dtype).reshape(1, 3, 1, 1)
        return (images - Tensor(mean, dtype=images.dtype)) / Tensor(std, dtype=images.dtype)

    def embed(self, images):
        """Unit-norm embeddings (N, D) of raw [0, 1] images (N, 3, H, W)."""
        return l2_normalize(self._embed_raw(self.preprocess(images)))

    def style_features(self, images):
        """Tapped early-layer maps [(name, (N, C, h, w))] of raw [0, 1] images."""
        return self._style_maps(self.preprocess(images))

    def _embed_raw(self, x):
        raise NotImplementedError

    def _style_maps(self, x):
        raise NotImplementedError
