"""Command-line entry points.

``stylestroke`` optimizes a drawing and writes its artifacts to ``--out``;
``stylestroke-embed`` writes an image embedding in the text-embedding file
format (handy for desk-scale runs without a text encoder).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys

from . import __version__
from . import tensor as T
from .encoders import load_encoder, load_text_embedding, save_text_embedding
from .errors import StyleStrokeError
from .io import decode_png, encode_png, export_svg, load_style_image, write_atomic
from .optimize import RunConfig, Schedule, best_of_n, load_encoders
from .raster import render

log = logging.getLogger("stylestroke")

# flag dest -> RunConfig field
FLAG_FIELDS = {
    "lambda_content": "lambda_content",
    "lambda_style": "lambda_style",
    "strokes": "num_strokes",
    "iters": "iterations",
    "schedule": "schedule",
    "candidates": "candidates",
    "seed": "seed",
    "n_aug": "n_aug",
    "canvas": "canvas",
    "save_every": "save_every",
    "encoder": "encoder",
    "style_encoder": "style_encoder",
    "encoder_size": "encoder_size",
    "features": "m_features",
    "sigma": "sigma",
}
PATH_KEYS = ("style", "text_embedding", "out")


class UsageError(Exception):
    pass


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _schedule(text):
    try:
        return str(Schedule.parse(text))
    except StyleStrokeError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    p = argparse.ArgumentParser(prog="stylestroke", description="Optimize a brush-stroke drawing toward a "
                                "text embedding and a style image.")
    p.add_argument("--style", metavar="PATH", help="style image (8-bit PNG)")
    p.add_argument("--text-embedding", metavar="PATH", help="text embedding JSON")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--config", metavar="PATH", help="JSON config; flags override its values")
    p.add_argument("--encoder", metavar="SPEC", help="toy, toy:SEED or onnx:PATH (default toy)")
    p.add_argument("--style-encoder", metavar="SPEC", help="style feature encoder (default: --encoder)")
    p.add_argument("--encoder-size", type=int, metavar="N", help="toy encoder input size (default 224)")
    p.add_argument("--lambda-content", type=float, metavar="F", help="content loss weight (default 1.0)")
    p.add_argument("--lambda-style", type=float, metavar="F", help="style loss weight (default 1.0)")
    p.add_argument("--strokes", type=int, metavar="N", help="number of strokes (default 256)")
    p.add_argument("--iters", type=int, metavar="N", help="iterations (default 250)")
    p.add_argument("--schedule", type=_schedule, metavar="S",
                   help="concerted, alternated:C:S or sequential:C:S (default concerted)")
    p.add_argument("--candidates", type=int, metavar="N", help="drawings generated; best kept (default 4)")
    p.add_argument("--seed", type=_seed, metavar="U64", help="master seed (default 0)")
    p.add_argument("--n-aug", type=int, metavar="N", help="augmented views per step (default 4)")
    p.add_argument("--features", type=int, metavar="M", help="style feature samples per layer (default 1024)")
    p.add_argument("--sigma", type=float, help="edge softness in pixels (default 1.0)")
    p.add_argument("--canvas", type=int, nargs=2, metavar=("W", "H"), help="canvas size (default 224 224)")
    p.add_argument("--save-every", type=int, metavar="K", help="write a frame every K iterations (0: off)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def resolve(args):
    """Merge defaults < config file < flags into (RunConfig, paths dict)."""
    doc = {}
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(args.config)
        with open(args.config) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    paths = {k: doc.pop(k, None) for k in PATH_KEYS}
    for key in PATH_KEYS:
        if getattr(args, key) is not None:
            paths[key] = getattr(args, key)
    for dest, name in FLAG_FIELDS.items():
        value = getattr(args, dest)
        if value is not None:
            doc[name] = value
    try:
        config = RunConfig.from_dict(doc).validate()
    except (TypeError, StyleStrokeError) as exc:
        raise UsageError(str(exc)) from None
    missing = [f"--{k.replace('_', '-')}" for k in PATH_KEYS if not paths[k]]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")
    return config, paths


def _fmt(v):
    return "" if math.isnan(v) else repr(float(v))


def losses_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "content", "style", "combined", "phase"])
    for it, rep, phase in history:
        w.writerow([it, _fmt(rep.content), _fmt(rep.style), _fmt(rep.combined), phase])
    return buf.getvalue()


def _report(rep):
    return {"content": rep.content, "style": rep.style, "combined": rep.combined}


def write_outputs(out, result, config, paths):
    os.makedirs(out, exist_ok=True)
    d = result.drawing
    encode_png(render(d, config.sigma, config.segments), os.path.join(out, "final.png"))
    export_svg(d, os.path.join(out, "final.svg"))
    write_atomic(os.path.join(out, "drawing.json"), d.to_json())
    write_atomic(os.path.join(out, "losses.csv"), losses_csv(result.history))
    doc = dict(config.to_dict(), **{k: os.path.abspath(v) for k, v in paths.items()})
    write_atomic(os.path.join(out, "config.json"), json.dumps(doc, indent=1) + "\n")
    summary = {
        "candidate": result.candidate,
        "candidate_cosines": result.candidate_scores,
        "cosine": result.cosine,
        "initial": _report(result.initial),
        "final": _report(result.final),
    }
    write_atomic(os.path.join(out, "summary.json"), json.dumps(summary, indent=1) + "\n")
    write_atomic(os.path.join(out, "timing.json"), json.dumps({k: round(v, 4) for k, v in result.timings.items()},
                                                               indent=1) + "\n")
    if result.snapshots:
        frames = os.path.join(out, "frames")
        os.makedirs(frames, exist_ok=True)
        for it, snap in result.snapshots:
            encode_png(render(snap, config.sigma, config.segments), os.path.join(frames, f"frame_{it:05d}.png"))


def _check_inputs(paths):
    for key in ("style", "text_embedding"):
        if not os.path.isfile(paths[key]):
            raise FileNotFoundError(paths[key])


def run_command(argv=None):
    """Parse ``argv``, run, write artifacts; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config, paths = resolve(args)
        _check_inputs(paths)
        for spec in (config.encoder, config.style_encoder):
            if spec and spec.startswith("onnx:") and not os.path.isfile(spec[5:]):
                raise FileNotFoundError(spec[5:])
        encoder, extractor = load_encoders(config)
        text = load_text_embedding(paths["text_embedding"], expected_dim=encoder.dim)
        style = load_style_image(paths["style"], extractor.input_size)
        log.info("running %d candidate(s) x %d iterations", config.candidates, config.total_iterations)
        result = best_of_n(config, text, style, encoder=encoder, extractor=extractor)
        write_outputs(paths["out"], result, config, paths)
        log.info("candidate %d kept (cosine %.4f); outputs in %s", result.candidate, result.cosine, paths["out"])
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"stylestroke: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"stylestroke: error: no such file: {exc.filename or exc.args[0]}", file=sys.stderr)
        return 1
    except (StyleStrokeError, OSError, ValueError) as exc:
        print(f"stylestroke: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())


def embed_command(argv=None):
    p = argparse.ArgumentParser(prog="stylestroke-embed",
                                description="Write an image embedding in the text-embedding file format.")
    p.add_argument("image", help="8-bit PNG")
    p.add_argument("--encoder", default="toy", metavar="SPEC", help="toy, toy:SEED or onnx:PATH")
    p.add_argument("--encoder-size", type=int, metavar="N")
    p.add_argument("--out", required=True, metavar="PATH")
    try:
        args = p.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        enc = load_encoder(args.encoder, args.encoder_size)
        with T.no_grad():
            vec = enc.embed(decode_png(args.image)).numpy()[0]
        save_text_embedding(args.out, vec, model=args.encoder)
    except FileNotFoundError as exc:
        print(f"stylestroke-embed: error: no such file: {exc.filename}", file=sys.stderr)
        return 1
    except (StyleStrokeError, OSError, ValueError) as exc:
        print(f"stylestroke-embed: error: {exc}", file=sys.stderr)
        return 1
    return 0


def embed_main():
    sys.exit(embed_command())


if __name__ == "__main__":
    main()
