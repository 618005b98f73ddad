"""tma-export: image directory + labels CSV -> engine-readable bag files."""

import argparse
import sys

from .encoders import EncoderSpec
from .errors import ConfigError, DomainError, ExportError
from .export import export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tma-export", description=__doc__)
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory of core images named <core_id>.<ext>")
    parser.add_argument("--labels", required=True,
                        help="CSV with columns core_id,class_name,tma_id")
    parser.add_argument("--encoder", choices=("plip", "cnn", "stub"), default="plip")
    parser.add_argument("--patch", type=int, default=256)
    parser.add_argument("--filter", type=float, default=None,
                        help="tissue fraction threshold; omit to keep all patches")
    parser.add_argument("--out", required=True)
    parser.add_argument("--dim", type=int, default=None,
                        help="embedding dimension (stub: free choice; "
                        "model backends: must match the model)")
    parser.add_argument("--seed", type=int, default=0, help="stub projection seed")
    parser.add_argument("--dataset-id", default="exported")
    parser.add_argument("--weights", default="", help="model weights reference")
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    default_dim = 16 if args.encoder == "stub" else 512
    spec = EncoderSpec(backend=args.encoder,
                       dim=args.dim if args.dim is not None else default_dim,
                       weights_ref=args.weights, seed=args.seed)
    try:
        result = export(args.in_dir, args.labels, spec, args.out, patch=args.patch,
                        filter_threshold=args.filter, dataset_id=args.dataset_id)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ExportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"exported {result.exported} cores ({len(result.excluded)} excluded)")
    print(f"manifest: {result.manifest_path}")
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
