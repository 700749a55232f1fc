"""PNG and SVG files, style-image preparation and atomic artifact writes."""

from __future__ import annotations

import io
import os
import re
import tempfile
import xml.etree.ElementTree as ET

import numpy as np
from PIL import Image

from . import tensor as T
from .errors import DecodeError, ParseError, UnsupportedFormatError
from .nn import resize_bilinear
from .scene import WHITE, Drawing, Stroke

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
SVG_NS = "http://www.w3.org/2000/svg"


def write_atomic(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# -- PNG ---------------------------------------------------------------------

def decode_png(path):
    """(3, H, W) float32 image in [0, 1]; transparency is composited over white."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != PNG_SIGNATURE or len(raw) < 33 or raw[12:16] != b"IHDR":
        raise DecodeError(f"{path}: not a PNG file")
    depth = raw[24]
    if depth > 8:
        raise UnsupportedFormatError(f"{path}: {depth}-bit PNG; only 8-bit channels are supported")
    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            rgba = np.asarray(im.convert("RGBA"), dtype=np.float32) / 255.0
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from None
    rgb, alpha = rgba[..., :3], rgba[..., 3:]
    out = rgb * alpha + (1.0 - alpha)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def to_uint8(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {img.shape}")
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def encode_png(img, path):
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), "RGB").save(buf, format="PNG")
    write_atomic(path, buf.getvalue())


def prepare_style_image(img, size):
    """Center-crop to a square, then bilinear-resize to ``size`` x ``size``."""
    img = np.asarray(img, dtype=np.float32)
    _, h, w = img.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    crop = np.ascontiguousarray(img[:, top : top + side, left : left + side])
    with T.no_grad():
        return resize_bilinear(crop, size, size).numpy()


def load_style_image(path, size):
    return prepare_style_image(decode_png(path), size)


# -- SVG ---------------------------------------------------------------------

def _num(v):
    s = f"{float(v):.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("", "-0") else s


def _rgb(color):
    r, g, b = (int(round(float(np.clip(c, 0, 1)) * 255)) for c in color[:3])
    return f"rgb({r},{g},{b})"


def drawing_to_svg(d):
    w, h = d.width, d.height
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="{SVG_NS}" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="{_rgb(d.background)}"/>',
    ]
    for s in d.strokes:
        p = s.points
        path = "M {} {} C {} {} {} {} {} {}".format(*(_num(v) for v in p.ravel()))
        lines.append(
            f'<path d="{path}" fill="none" stroke="{_rgb(s.color)}" stroke-opacity="{_num(s.color[3])}" '
            f'stroke-width="{_num(2 * s.radius)}" stroke-linecap="round" stroke-linejoin="round"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def export_svg(d, path):
    write_atomic(path, drawing_to_svg(d))


_RGB = re.compile(r"rgb\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)")
_PATH = re.compile(r"^\s*M\s*(\S+)[\s,]+(\S+)\s*C" + r"[\s,]*(\S+)[\s,]+(\S+)" * 3 + r"\s*$")


def _parse_rgb(text):
    m = _RGB.fullmatch((text or "").strip())
    if not m:
        raise ParseError(f"unsupported color {text!r}")
    return tuple(int(v) / 255.0 for v in m.groups())


def svg_to_drawing(text):
    """Inverse of :func:`drawing_to_svg` for files in the exported subset."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ParseError(f"SVG: {exc}") from None
    try:
        width, height = int(float(root.get("width"))), int(float(root.get("height")))
    except (TypeError, ValueError):
        raise ParseError("SVG root needs numeric width and height") from None
    background, strokes = WHITE, []
    for el in root:
        tag = el.tag.rsplit("}", 1)[-1]
        if tag == "rect":
            background = _parse_rgb(el.get("fill"))
        elif tag == "path":
            m = _PATH.match(el.get("d", ""))
            if not m:
                raise ParseError(f"unsupported path data {el.get('d')!r}")
            try:
                pts = np.array([float(v) for v in m.groups()]).reshape(4, 2)
                radius = float(el.get("stroke-width", "2")) / 2
                alpha = float(el.get("stroke-opacity", "1"))
            except ValueError as exc:
                raise ParseError(f"bad path attribute: {exc}") from None
            strokes.append(Stroke(pts, radius, (*_parse_rgb(el.get("stroke")), alpha)))
    return Drawing(strokes, width, height, background)


def load_svg(path):
    with open(path) as fh:
        return svg_to_drawing(fh.read())
