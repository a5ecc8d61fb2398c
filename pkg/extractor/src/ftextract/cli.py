"""Command-line entry point: frames or videos in, one `.ftens` file out."""

from __future__ import annotations

import argparse
import sys

from .encoders import EncoderConfig
from .extract import extract_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftextract", description=__doc__)
    parser.add_argument("--input", required=True,
                        help="episode directory tree, flat frame directory, video file, or directory of videos")
    parser.add_argument("--encoder", choices=["resnet18", "dinov2"], default="resnet18")
    parser.add_argument("--layer", default=None,
                        help="resnet18: layer1..layer4 (default layer4); dinov2: hub model tag (default dinov2_vits14)")
    parser.add_argument("--resolution", type=int, default=224)
    parser.add_argument("--weights", choices=["imagenet", "random"], default="imagenet",
                        help="random = frozen seeded initialization for offline runs")
    parser.add_argument("--seed", type=int, default=0, help="initialization seed for --weights random")
    parser.add_argument("--out", required=True, help="output .ftens path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    layer = args.layer or ("layer4" if args.encoder == "resnet18" else "dinov2_vits14")
    config = EncoderConfig(
        name=args.encoder,
        layer=layer,
        resolution=args.resolution,
        weights=args.weights,
        seed=args.seed,
    )
    try:
        shape = extract_features(args.input, config, args.out)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    n, t, p, f = shape
    print(f"wrote {args.out}: N={n} T={t} P={p} F={f} encoder_id={config.encoder_id!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
