from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T

MAX_FEATURES = 1024


@dataclass
class FeatureSet:
    """Per-layer (name, (M, C) feature tensor) pairs plus the flat locations used."""

    layers: list
    coords: dict

    def __iter__(self):
        return iter(self.layers)


def _gather(fmap, idx):
    """(M, C) channel vectors of a (1, C, h, w) or (C, h, w) map at flat locations ``idx``."""
    c = fmap.shape[-3]
    flat = T.reshape(fmap, (c, -1))
    return T.transpose(T.take(flat, idx, axis=1))


def sample_features(maps, m=MAX_FEATURES, rng=None, coords=None):
    """Sample ``m`` spatial locations per layer, uniformly without replacement.

    Layers with at most ``m`` locations contribute all of them in row-major
    order.  Pass ``coords`` (from an earlier FeatureSet) to reuse locations
    for a paired image.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    layers, used = [], {}
    for name, fmap in maps:
        if coords is not None:
            idx = coords[name]
        else:
            hw = fmap.shape[-1] * fmap.shape[-2]
            if hw <= m:
                idx = np.arange(hw)
            else:
                idx = np.sort(rng.choice(hw, size=m, replace=False))
        used[name] = idx
        layers.append((name, _gather(fmap, idx)))
    return FeatureSet(layers, used)
