"""Command-line entry point."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import selftest
from .config import PRESETS, preset
from .errors import MergeViTError
from .flops import model_flops
from .model import forward, param_shapes, random_init
from .ppm import load_image_ppm
from .pruning import METRIC_ALIASES, SimilarityMetric
from .viz import render_merge_trace
from .weights import load_weights, save_weights


def _keep_rate(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid keep rate {text!r}") from None
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"keep rate must lie in (0, 1], got {text}")
    return value


def _add_model_args(p: argparse.ArgumentParser, needs_weights: bool = True) -> None:
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    if needs_weights:
        p.add_argument("--weights", required=True, help="weight file written by gen-weights")
        p.add_argument("--image", required=True, help="binary PPM (P6) image")
    p.add_argument("--keep-rate", type=_keep_rate, default=None,
                   help="fraction of image tokens kept at each prune layer (default: 1.0)")
    p.add_argument("--metric", choices=sorted(set(METRIC_ALIASES) - {"attention_cross"}), default="cosine")
    p.add_argument("--metric-seed", type=int, default=0, help="seed for --metric random")
    p.add_argument("--no-multiscale", action="store_true", help="single-scale embedding, no fusion stage")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mergevit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="classify one image and print the top-5 logits")
    _add_model_args(p)

    p = sub.add_parser("viz", help="render merged-token groups for every prune layer")
    _add_model_args(p)
    p.add_argument("--out", required=True, help="output directory for PPM frames")
    p.add_argument("--palette-seed", type=int, default=0)

    p = sub.add_parser("flops", help="analytic MAC / FLOP report")
    _add_model_args(p, needs_weights=False)
    p.add_argument("--format", choices=("text", "kv"), default="text")

    p = sub.add_parser("gen-weights", help="write seeded random weights")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-multiscale", action="store_true", help="omit the coarse-branch and fusion tensors")

    sub.add_parser("selftest", help="run the built-in invariant checks")
    return parser


def _config(args):
    kwargs = {"multiscale": not args.no_multiscale}
    if getattr(args, "keep_rate", None) is not None:
        kwargs["keep_rate"] = args.keep_rate
    if hasattr(args, "metric"):
        kwargs["metric"] = SimilarityMetric.from_name(args.metric, args.metric_seed)
    return preset(args.preset, **kwargs)


def _run_model(args):
    cfg = _config(args)
    params = load_weights(args.weights, expected=param_shapes(cfg))
    image = load_image_ppm(args.image, cfg.image_size)
    return cfg, forward(image, params, cfg)


def _infer(args) -> None:
    cfg, trace = _run_model(args)
    order = np.argsort(-trace.logits, kind="stable")[:5]
    print(f"tokens per layer: {' '.join(map(str, trace.token_counts))}")
    for rank, idx in enumerate(order, 1):
        print(f"{rank}  class {int(idx):>4}  logit {float(trace.logits[idx]):+.6f}")


def _viz(args) -> None:
    cfg, trace = _run_model(args)
    for path in render_merge_trace(trace, args.out, cfg.grid, palette_seed=args.palette_seed):
        print(path)


def _flops(args) -> None:
    report = model_flops(_config(args))
    sys.stdout.write(report.to_kv() if args.format == "kv" else report.to_text())


def _gen_weights(args) -> None:
    cfg = preset(args.preset, multiscale=not args.no_multiscale)
    save_weights(random_init(cfg, args.seed), args.out)
    print(f"wrote {args.out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return selftest.run()
    handler = {"infer": _infer, "viz": _viz, "flops": _flops, "gen-weights": _gen_weights}[args.command]
    try:
        handler(args)
    except (MergeViTError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
