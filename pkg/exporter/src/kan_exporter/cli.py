"""kan-export: convert a KAN training checkpoint to the neutral JSON format."""

import argparse
import json
import sys

from .exporter import ExportError, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kan-export",
        description="Export a PyKAN-style checkpoint to the neutral KAN model format.",
    )
    parser.add_argument("checkpoint", help="path to the torch checkpoint")
    parser.add_argument("out", help="output neutral model JSON path")
    parser.add_argument("--verify-n", type=int, default=10,
                        help="random inputs for the agreement check (default 10)")
    parser.add_argument("--threshold", type=float, default=0.5,
                        help="decision threshold stored in the model file")
    parser.add_argument("--manifest", default=None,
                        help="manifest path (default: <out>.manifest.json)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    try:
        manifest = export(args.checkpoint, args.out, verify_n=args.verify_n,
                          threshold=args.threshold, manifest_path=args.manifest,
                          seed=args.seed)
    except ExportError as exc:
        sys.stderr.write(json.dumps({"error": str(exc), "kind": "ExportError"}) + "\n")
        return 1
    except FileNotFoundError as exc:
        sys.stderr.write(json.dumps({"error": str(exc), "kind": "FileNotFoundError"}) + "\n")
        return 1
    sys.stdout.write(manifest.to_json() + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
