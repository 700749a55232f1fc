"""Brush-stroke drawings: strokes, random initialization, parameter groups, clamping."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, ParseError
from .tensor import Tensor

RADIUS_MIN = 0.5
RADIUS_MAX = 8.0
DEFAULT_STROKES = 256
DEFAULT_CANVAS = (224, 224)
WHITE = (1.0, 1.0, 1.0)

# P1..P3 step this fraction of the canvas extent away from the previous point
INIT_STEP = 0.05


@dataclass
class Stroke:
    points: np.ndarray  # (4, 2) cubic Bezier control points, pixels
    radius: float
    color: np.ndarray  # (4,) RGBA in [0, 1]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(4, 2)
        self.color = np.asarray(self.color, dtype=np.float32).reshape(4)
        self.radius = float(self.radius)


@dataclass
class Drawing:
    strokes: list = field(default_factory=list)
    width: int = DEFAULT_CANVAS[0]
    height: int = DEFAULT_CANVAS[1]
    background: tuple = WHITE

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfigError(f"canvas must be positive, got {self.width}x{self.height}")
        self.background = tuple(float(c) for c in self.background)

    def __len__(self):
        return len(self.strokes)

    def arrays(self):
        """Stroke data as (points (n,4,2), radii (n,), colors (n,4)) float32 arrays."""
        n = len(self.strokes)
        if n == 0:
            return (np.zeros((0, 4, 2), np.float32), np.zeros(0, np.float32), np.zeros((0, 4), np.float32))
        pts = np.stack([s.points for s in self.strokes]).astype(np.float32)
        radii = np.array([s.radius for s in self.strokes], dtype=np.float32)
        colors = np.stack([s.color for s in self.strokes]).astype(np.float32)
        return pts, radii, colors

    @classmethod
    def from_arrays(cls, points, radii, colors, width, height, background=WHITE):
        points, radii, colors = (np.asarray(a, dtype=np.float32) for a in (points, radii, colors))
        strokes = [Stroke(points[i], radii[i], colors[i]) for i in range(len(radii))]
        return cls(strokes, int(width), int(height), background)

    def copy(self):
        return Drawing.from_arrays(*self.arrays(), self.width, self.height, self.background)

    def to_dict(self):
        return {
            "canvas": [int(self.width), int(self.height)],
            "background": [float(c) for c in self.background],
            "strokes": [
                {
                    "points": [[float(x), float(y)] for x, y in s.points],
                    "radius": float(s.radius),
                    "color": [float(c) for c in s.color],
                }
                for s in self.strokes
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            w, h = doc["canvas"]
            strokes = [Stroke(s["points"], s["radius"], s["color"]) for s in doc["strokes"]]
            return cls(strokes, int(w), int(h), tuple(doc.get("background", WHITE)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed drawing document: {exc}") from None

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"drawing JSON: {exc}") from None
        return cls.from_dict(doc)


def init_random(num_strokes, canvas=DEFAULT_CANVAS, rng_seed=0, radius_range=(RADIUS_MIN, RADIUS_MAX),
                background=WHITE):
    """Random drawing: a short random walk of control points per stroke.

    P0 is uniform over the canvas and each later point steps up to 5% of the
    canvas extent (per axis) from the previous one; points are then kept
    within a 5% margin around the canvas.  Alpha starts in [0.5, 1].
    """
    width, height = canvas
    if num_strokes < 1:
        raise InvalidConfigError("num_strokes must be >= 1")
    if width <= 0 or height <= 0:
        raise InvalidConfigError(f"canvas must be positive, got {width}x{height}")
    extent = np.array([width, height], dtype=np.float64)
    rng = np.random.default_rng(rng_seed)
    p0 = rng.uniform(0.0, 1.0, size=(num_strokes, 1, 2)) * extent
    steps = rng.uniform(-INIT_STEP, INIT_STEP, size=(num_strokes, 3, 2)) * extent
    points = np.concatenate([p0, p0 + np.cumsum(steps, axis=1)], axis=1)
    points = np.clip(points, -INIT_STEP * extent, (1 + INIT_STEP) * extent)
    radii = rng.uniform(radius_range[0], radius_range[1], size=num_strokes)
    rgb = rng.uniform(0.0, 1.0, size=(num_strokes, 3))
    alpha = rng.uniform(0.5, 1.0, size=(num_strokes, 1))
    colors = np.concatenate([rgb, alpha], axis=1)
    return Drawing.from_arrays(points, radii, colors, width, height, background)


def param_groups(d):
    """Gradient-requiring (trajectories (n,4,2), radii (n,), colors (n,4)) tensors."""
    pts, radii, colors = d.arrays()
    return (
        Tensor(pts, requires_grad=True, name="trajectories"),
        Tensor(radii, requires_grad=True, name="radii"),
        Tensor(colors, requires_grad=True, name="colors"),
    )


def reassemble(trajectories, radii, colors, like):
    """Inverse of :func:`param_groups`, keeping the canvas of ``like``."""
    unwrap = (lambda t: t.data if isinstance(t, Tensor) else t)
    return Drawing.from_arrays(unwrap(trajectories), unwrap(radii), unwrap(colors), like.width, like.height,
                               like.background)


def clamp_arrays(radii, colors, radius_range=(RADIUS_MIN, RADIUS_MAX)):
    """In-place clamp of raw radius/color arrays; control points are left alone."""
    np.clip(radii, radius_range[0], radius_range[1], out=radii)
    np.clip(colors, 0.0, 1.0, out=colors)


def clamp(d, radius_range=(RADIUS_MIN, RADIUS_MAX)):
    pts, radii, colors = d.arrays()
    clamp_arrays(radii, colors, radius_range)
    return Drawing.from_arrays(pts, radii, colors, d.width, d.height, d.background)
