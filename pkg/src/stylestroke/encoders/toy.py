"""Seeded random convnet used as a desk-scale stand-in for pretrained encoders.

Architecture: four blocks of 3x3 convolution (stride 2, padding 1, zero
bias) followed by ReLU, with 8, 16, 32 and 64 output channels.  The
embedding is the L2-normalized spatial mean of block 4; style taps are the
outputs of blocks 1-3.

Weights are drawn from :class:`PCG32` seeded with ``seed`` (stream 54):
block by block, each kernel in row-major (out, in, kh, kw) order, every
value ``(2 * u - 1) * sqrt(6 / fan_in)`` with ``u = u32 / 2**32`` and
``fan_in = in * 9``.
"""

from __future__ import annotations

import numpy as np

from .. import nn
from .. import tensor as T
from ..tensor import Tensor
from .base import ImageEncoder
from .pcg import PCG32

CHANNELS = (8, 16, 32, 64)
STYLE_TAPS = ("block1", "block2", "block3")


def toy_weights(seed):
    rng = PCG32(seed)
    weights, c_in = [], 3
    for c_out in CHANNELS:
        fan_in = c_in * 9
        u = rng.uniform(c_out * fan_in)
        w = (2.0 * u - 1.0) * np.sqrt(6.0 / fan_in)
        weights.append(w.reshape(c_out, c_in, 3, 3).astype(np.float32))
        c_in = c_out
    return weights


class ToyEncoder(ImageEncoder):
    mean = (0.5, 0.5, 0.5)
    std = (0.5, 0.5, 0.5)
    dim = CHANNELS[-1]
    taps = STYLE_TAPS

    def __init__(self, seed=0, input_size=224):
        self.seed = int(seed)
        self.input_size = int(input_size)
        self.weights = [Tensor(w, dtype=np.float32) for w in toy_weights(self.seed)]

    def __repr__(self):
        return f"ToyEncoder(seed={self.seed}, input_size={self.input_size})"

    def blocks(self, x, upto=4):
        outs = []
        for w in self.weights[:upto]:
            x = T.relu(nn.conv2d(x, w, stride=2, padding=1))
            outs.append(x)
        return outs

    def _embed_raw(self, x):
        return self.blocks(x)[-1].mean(axis=(2, 3))

    def _style_maps(self, x):
        return list(zip(STYLE_TAPS, self.blocks(x, upto=3)))


def toy_encoder(seed=0, input_size=224):
    """(image encoder, style feature extractor); one network fills both roles."""
    enc = ToyEncoder(seed, input_size)
    return enc, enc
