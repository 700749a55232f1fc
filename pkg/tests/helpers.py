"""Finite-difference oracle shared by the gradient tests.

The oracle only ever calls forward functions; it never looks at the tape.
"""

import numpy as np

from stylestroke.tensor import Tensor, backward, default_dtype


def rel_error(analytic, numeric, floor=1e-8):
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def central_difference(fn, arrays, which, index, h):
    """d fn / d arrays[which][index] by central differences (fn returns a float)."""
    plus = [a.copy() for a in arrays]
    minus = [a.copy() for a in arrays]
    plus[which][index] += h
    minus[which][index] -= h
    return (fn(*plus) - fn(*minus)) / (2 * h)


def check_gradients(build, arrays, h=1e-3, samples=None, seed=0, floor=1e-8):
    """Compare tape gradients of ``build(*tensors) -> scalar Tensor`` to finite differences.

    Runs in float64.  ``samples`` limits the number of coordinates checked
    per input (chosen at random); ``None`` checks all of them.  Returns the
    worst relative error.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    with default_dtype(np.float64):
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        root = build(*leaves)
        grads = backward(root, inputs=leaves)

        def value(*arrs):
            return float(build(*[Tensor(a) for a in arrs]).item())

        worst = 0.0
        for k, leaf in enumerate(leaves):
            coords = list(np.ndindex(arrays[k].shape))
            if samples is not None and len(coords) > samples:
                pick = rng.choice(len(coords), size=samples, replace=False)
                coords = [coords[i] for i in pick]
            for idx in coords:
                num = central_difference(value, arrays, k, idx, h)
                worst = max(worst, rel_error(grads[leaf][idx], num, floor))
    return worst
