"""RMSProp optimization of stroke parameters under the combined loss.

Each candidate run derives four independent streams from
``SeedSequence([seed, candidate])``: stroke initialization, augmentation,
feature sampling, and evaluation (the fixed views used for the initial and
final loss reports).
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoders import load_encoder
from .errors import InvalidConfigError, InvalidShapeError
from .losses import LAMBDA_CONTENT, LAMBDA_STYLE, LossReport, check_weights, content_loss, style_loss, style_targets
from .raster import DEFAULT_SEGMENTS, DEFAULT_SIGMA, rasterize, render
from .scene import DEFAULT_CANVAS, DEFAULT_STROKES, Drawing, clamp_arrays, init_random
from .tensor import Tensor, backward

LR_TRAJECTORIES = 0.3
LR_RADII = 0.3
LR_COLORS = 0.03
RMSPROP_ALPHA = 0.99
RMSPROP_EPS = 1e-8
DEFAULT_ITERATIONS = 250
DEFAULT_CANDIDATES = 4
DEFAULT_BLOCK = 50
GROUPS = ("trajectories", "radii", "colors")


@dataclass
class RmspropState:
    v: np.ndarray
    lr: float
    alpha: float = RMSPROP_ALPHA
    eps: float = RMSPROP_EPS

    @classmethod
    def zeros(cls, shape, lr, alpha=RMSPROP_ALPHA, eps=RMSPROP_EPS):
        return cls(np.zeros(shape, dtype=np.float64), float(lr), float(alpha), float(eps))


def rmsprop_step(params, grads, st):
    """One RMSProp update; returns new params and updates ``st.v`` in place."""
    params = np.asarray(params)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or st.v.shape != params.shape:
        raise InvalidShapeError(f"rmsprop_step shapes differ: params {params.shape}, grads {grads.shape}, "
                                f"state {st.v.shape}")
    st.v *= st.alpha
    st.v += (1.0 - st.alpha) * grads * grads
    step = st.lr * grads / (np.sqrt(st.v) + st.eps)
    return (params - step).astype(params.dtype)


@dataclass(frozen=True)
class Schedule:
    """``concerted``, ``alternated:C:S`` or ``sequential:C:S``."""

    kind: str = "concerted"
    content: int = DEFAULT_BLOCK
    style: int = DEFAULT_BLOCK

    @classmethod
    def parse(cls, text):
        if isinstance(text, Schedule):
            return text
        parts = str(text).split(":")
        kind = parts[0]
        if kind == "concerted" and len(parts) == 1:
            return cls("concerted")
        if kind in ("alternated", "sequential") and len(parts) in (1, 3):
            if len(parts) == 1:
                return cls(kind) if kind == "alternated" else cls(kind, DEFAULT_ITERATIONS, DEFAULT_ITERATIONS)
            try:
                c, s = int(parts[1]), int(parts[2])
            except ValueError:
                raise InvalidConfigError(f"bad schedule {text!r}") from None
            sched = cls(kind, c, s)
            sched.validate()
            return sched
        raise InvalidConfigError(f"bad schedule {text!r}; expected concerted, alternated:C:S or sequential:C:S")

    def __str__(self):
        return self.kind if self.kind == "concerted" else f"{self.kind}:{self.content}:{self.style}"

    def validate(self):
        if self.kind not in ("concerted", "alternated", "sequential"):
            raise InvalidConfigError(f"unknown schedule {self.kind!r}")
        if self.kind != "concerted" and (self.content < 1 or self.style < 1):
            raise InvalidConfigError("schedule block sizes must be >= 1")

    def length(self, iterations):
        """Total iterations; a sequential schedule sets its own length."""
        return self.content + self.style if self.kind == "sequential" else iterations

    def phases(self, iterations):
        """Phase label ("joint", "content" or "style") of every iteration."""
        if self.kind == "concerted":
            return ["joint"] * iterations
        if self.kind == "sequential":
            return ["content"] * self.content + ["style"] * self.style
        cycle = ["content"] * self.content + ["style"] * self.style
        return [cycle[i % len(cycle)] for i in range(iterations)]


@dataclass
class RunConfig:
    lambda_content: float = LAMBDA_CONTENT
    lambda_style: float = LAMBDA_STYLE
    num_strokes: int = DEFAULT_STROKES
    canvas: tuple = DEFAULT_CANVAS
    iterations: int = DEFAULT_ITERATIONS
    schedule: str = "concerted"
    seed: int = 0
    encoder: str = "toy"
    style_encoder: str | None = None
    encoder_size: int | None = None
    n_aug: int = 4
    m_features: int = 1024
    sigma: float = DEFAULT_SIGMA
    segments: int = DEFAULT_SEGMENTS
    candidates: int = DEFAULT_CANDIDATES
    lr_trajectories: float = LR_TRAJECTORIES
    lr_radii: float = LR_RADII
    lr_colors: float = LR_COLORS
    eval_views: int = 16
    save_every: int = 0

    def validate(self):
        check_weights(self.lambda_content, self.lambda_style)
        sched = Schedule.parse(self.schedule)
        sched.validate()
        if sched.kind != "concerted" and (self.lambda_content == 0 or self.lambda_style == 0):
            raise InvalidConfigError(f"{sched.kind} schedule needs both loss weights positive")
        checks = {
            "iterations": self.iterations >= 1,
            "num_strokes": self.num_strokes >= 1,
            "n_aug": self.n_aug >= 1,
            "m_features": self.m_features >= 1,
            "candidates": self.candidates >= 1,
            "eval_views": self.eval_views >= 1,
            "save_every": self.save_every >= 0,
            "sigma": self.sigma > 0,
            "segments": self.segments >= 1,
            "canvas": len(self.canvas) == 2 and min(self.canvas) >= 1,
            "seed": 0 <= self.seed < 2**64,
        }
        for name in ("lr_trajectories", "lr_radii", "lr_colors"):
            checks[name] = getattr(self, name) >= 0 and math.isfinite(getattr(self, name))
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise InvalidConfigError(f"invalid config values: {', '.join(bad)}")
        return self

    @property
    def total_iterations(self):
        return Schedule.parse(self.schedule).length(self.iterations)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["canvas"] = list(self.canvas)
        d["schedule"] = str(Schedule.parse(self.schedule))
        return d

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "canvas" in doc:
            doc["canvas"] = tuple(int(v) for v in doc["canvas"])
        return cls(**doc)


@dataclass
class RunResult:
    drawing: Drawing
    history: list  # (iteration, LossReport, phase); unevaluated terms are NaN
    timings: dict
    cosine: float  # unaugmented final raster vs text embedding
    initial: LossReport
    final: LossReport
    candidate: int = 0
    snapshots: list = field(default_factory=list)  # (iteration, Drawing)
    candidate_scores: list = field(default_factory=list)


def candidate_streams(seed, candidate):
    """Seed sequences for (init, augmentation, feature sampling, evaluation)."""
    return np.random.SeedSequence([int(seed), int(candidate)]).spawn(4)


def load_encoders(config):
    size = config.encoder_size
    encoder = load_encoder(config.encoder, size)
    if config.style_encoder in (None, config.encoder):
        return encoder, encoder
    return encoder, load_encoder(config.style_encoder, size)


def evaluate(drawing, text, targets, encoder, extractor, config, seed_seq):
    """Both losses off the tape, with views and feature locations fixed by ``seed_seq``."""
    # explicit child keys: spawn() is stateful and would differ between calls
    aug_ss, feat_ss = (np.random.SeedSequence(seed_seq.entropy, spawn_key=(*seed_seq.spawn_key, k)) for k in (0, 1))
    with T.no_grad():
        img = rasterize(*drawing.arrays(), drawing.width, drawing.height, drawing.background,
                        config.sigma, config.segments)
        c = content_loss(img, text, encoder, config.eval_views, np.random.default_rng(aug_ss)).item()
        s = style_loss(img, targets, extractor, config.m_features, np.random.default_rng(feat_ss)).item()
    lc, ls = config.lambda_content, config.lambda_style
    return LossReport(c, s, lc * c + ls * s, None, lc, ls)


def text_cosine(drawing, text, encoder, config):
    with T.no_grad():
        img = render(drawing, config.sigma, config.segments)
        emb = encoder.embed(img).numpy()[0].astype(np.float64)
    t = np.asarray(text, dtype=np.float64)
    return float(emb @ t / (np.linalg.norm(emb) * np.linalg.norm(t)))


def run(config, text, style, encoder=None, extractor=None, candidate=0, targets=None):
    """Optimize one candidate drawing; ``style`` is a (3, H, W) image in [0, 1]."""
    config.validate()
    sched = Schedule.parse(config.schedule)
    if encoder is None:
        encoder, extractor = load_encoders(config)
    extractor = extractor or encoder
    text = np.asarray(text, dtype=np.float32).ravel()
    if text.size != encoder.dim:
        raise InvalidConfigError(f"text embedding has dimension {text.size}, encoder produces {encoder.dim}")

    timings = {}
    t0 = time.perf_counter()
    init_ss, aug_ss, feat_ss, eval_ss = candidate_streams(config.seed, candidate)
    aug_rng, feat_rng = np.random.default_rng(aug_ss), np.random.default_rng(feat_ss)
    if targets is None:
        targets = style_targets(style, extractor)
    drawing = init_random(config.num_strokes, tuple(config.canvas), init_ss)
    width, height, bg = drawing.width, drawing.height, drawing.background
    params = list(drawing.arrays())
    lrs = (config.lr_trajectories, config.lr_radii, config.lr_colors)
    states = [RmspropState.zeros(p.shape, lr) for p, lr in zip(params, lrs)]
    initial = evaluate(drawing, text, targets, encoder, extractor, config, eval_ss)
    timings["init"] = time.perf_counter() - t0

    history, snapshots = [], []
    weights = {
        "joint": (config.lambda_content, config.lambda_style),
        "content": (config.lambda_content, 0.0),
        "style": (0.0, config.lambda_style),
    }
    for it, phase in enumerate(sched.phases(sched.length(config.iterations))):
        t_iter = time.perf_counter()
        wc, ws = weights[phase]
        leaves = [Tensor(p, requires_grad=True) for p in params]
        img = rasterize(*leaves, width, height, bg, config.sigma, config.segments)
        c = content_loss(img, text, encoder, config.n_aug, aug_rng) if wc > 0 else None
        s = style_loss(img, targets, extractor, config.m_features, feat_rng) if ws > 0 else None
        terms = [w * t for w, t in ((wc, c), (ws, s)) if t is not None]
        total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
        grads = backward(total, inputs=leaves)
        cv = float(c.item()) if c is not None else math.nan
        sv = float(s.item()) if s is not None else math.nan
        combined = (wc * cv if c is not None else 0.0) + (ws * sv if s is not None else 0.0)
        history.append((it, LossReport(cv, sv, combined, None, wc, ws), phase))

        params = [rmsprop_step(p, grads[leaf], st) for p, leaf, st in zip(params, leaves, states)]
        clamp_arrays(params[1], params[2])
        if config.save_every and (it + 1) % config.save_every == 0:
            snapshots.append((it + 1, Drawing.from_arrays(*params, width, height, bg)))
        timings[phase] = timings.get(phase, 0.0) + time.perf_counter() - t_iter

    t1 = time.perf_counter()
    drawing = Drawing.from_arrays(*params, width, height, bg)
    final = evaluate(drawing, text, targets, encoder, extractor, config, eval_ss)
    cosine = text_cosine(drawing, text, encoder, config)
    timings["eval"] = time.perf_counter() - t1
    timings["total"] = time.perf_counter() - t0
    return RunResult(drawing, history, timings, cosine, initial, final, candidate, snapshots)


def best_of_n(config, text, style, n=None, encoder=None, extractor=None):
    """Run ``n`` candidates (default ``config.candidates``) and keep the best text match.

    Ties go to the lowest candidate index.
    """
    n = config.candidates if n is None else n
    if n < 1:
        raise InvalidConfigError("n must be >= 1")
    config.validate()
    if encoder is None:
        encoder, extractor = load_encoders(config)
    extractor = extractor or encoder
    targets = style_targets(style, extractor)
    best, scores = None, []
    for i in range(n):
        result = run(config, text, style, encoder, extractor, candidate=i, targets=targets)
        scores.append(result.cosine)
        if best is None or result.cosine > best.cosine:
            best = result
    best.candidate_scores = scores
    return best
