"""Image encoders, style feature sampling and text embedding I/O."""

from .base import ImageEncoder, l2_normalize
from .features import MAX_FEATURES, FeatureSet, sample_features
from .graph import EncoderGraph, OnnxEncoder, execute, load_onnx
from .pcg import PCG32
from .text import load_text_embedding, save_text_embedding
from .toy import ToyEncoder, toy_encoder


def load_encoder(spec, input_size=None):
    """Resolve ``"toy"``, ``"toy:<seed>"``, ``"onnx:<path>"`` or a bare ``.onnx`` path."""
    spec = str(spec)
    if spec == "toy" or spec.startswith("toy:"):
        seed = int(spec.split(":", 1)[1]) if ":" in spec else 0
        return ToyEncoder(seed, input_size or 224)
    if spec.startswith("onnx:"):
        spec = spec[5:]
    return OnnxEncoder(spec)


__all__ = [
    "EncoderGraph", "FeatureSet", "ImageEncoder", "MAX_FEATURES", "OnnxEncoder", "PCG32",
    "ToyEncoder", "execute", "l2_normalize", "load_encoder", "load_onnx", "load_text_embedding",
    "sample_features", "save_text_embedding", "toy_encoder",
]
