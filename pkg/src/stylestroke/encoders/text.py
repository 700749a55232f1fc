"""Precomputed text embeddings: JSON ``{"model": str, "dim": int, "embedding": [floats]}``."""

from __future__ import annotations

import json
import os

import numpy as np

from ..errors import ConfigError, DegenerateInputError, ParseError


def load_text_embedding(path, expected_dim=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or "embedding" not in doc:
        raise ParseError(f"{path}: missing 'embedding'")
    vec = np.asarray(doc["embedding"], dtype=np.float64)
    if vec.ndim != 1:
        raise ParseError(f"{path}: embedding must be a flat list")
    dim = int(doc.get("dim", len(vec)))
    if dim != len(vec):
        raise ParseError(f"{path}: dim {dim} but {len(vec)} values")
    if expected_dim is not None and dim != expected_dim:
        raise ConfigError(f"text embedding has dimension {dim}, encoder produces {expected_dim}")
    norm = np.linalg.norm(vec)
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateInputError(f"{path}: embedding has zero or non-finite norm")
    return (vec / norm).astype(np.float32)


def save_text_embedding(path, vector, model=""):
    vec = np.asarray(vector, dtype=np.float64).ravel()
    doc = {"model": model, "dim": int(vec.size), "embedding": [float(v) for v in vec]}
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)
