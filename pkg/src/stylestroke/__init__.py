"""Vector brush-stroke drawings optimized against a text embedding and a style image."""

__version__ = "0.1.0"
