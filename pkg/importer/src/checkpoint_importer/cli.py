"""Command line: checkpoint-importer convert --manifest m.json --out model.rres"""

import argparse
import sys

from checkpoint_importer.convert import ConversionError, convert
from checkpoint_importer.manifest import ManifestError, load_manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="checkpoint-importer",
        description="Convert a sequential CNN checkpoint into a model container.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("convert", help="run a conversion described by a manifest")
    p.add_argument("--manifest", required=True, help="manifest JSON path")
    p.add_argument("--out", required=True, help="output container path")
    args = parser.parse_args(argv)

    try:
        manifest = load_manifest(args.manifest)
        convert(manifest, args.out)
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc}", file=sys.stderr)
        return 3
    except ManifestError as exc:
        print(f"error: manifest: {exc}", file=sys.stderr)
        return 4
    except ConversionError as exc:
        print(f"error: conversion: {exc}", file=sys.stderr)
        return 5
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
