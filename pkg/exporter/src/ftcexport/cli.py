"""Command-line entry point.

    ftc-export --images data/train --out features.ftc --pooling spatial

Exit codes: 0 success, 2 usage, 3 pretrained weights unavailable,
4 export failed (unreadable tree, bad image, class-table mismatch),
9 unexpected error.
"""

import argparse
import sys

from .export import ExportSpec, ExportError, MissingWeightsError, export_features


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ftc-export",
        description="Export Inception-v3 bottleneck features from a class-per-folder "
        "image tree into an FTC1 feature container.",
    )
    parser.add_argument("--images", required=True, help="image tree root, one folder per class")
    parser.add_argument("--out", required=True, help="container output path")
    parser.add_argument(
        "--pooling",
        choices=("spatial", "vector"),
        default="spatial",
        help="keep the final activation grid, or average-pool it to one row per image",
    )
    parser.add_argument("--resize", type=int, default=299, help="square edge images are resized to")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument(
        "--random-init",
        action="store_true",
        help="use an untrained backbone instead of pretrained weights",
    )
    parser.add_argument("--seed", type=int, default=0, help="init seed, only used with --random-init")
    parser.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        image_root=args.images,
        out_path=args.out,
        pooling=args.pooling,
        resize=args.resize,
        batch_size=args.batch_size,
        random_init=args.random_init,
        seed=args.seed,
    )
    try:
        manifest = export_features(spec)
    except MissingWeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ExportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 9
    if not args.quiet:
        shape = "x".join(str(d) for d in manifest["feature_shape"])
        print(f"wrote {manifest['rows']} rows of {shape} features to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
