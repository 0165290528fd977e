"""CLI: convert MATLAB hyperspectral rasters to HSIC/HSIL and verify them."""

from __future__ import annotations

import argparse
import sys


def _build_parser():
    parser = argparse.ArgumentParser(prog="hsiconvert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert .mat data + ground truth")
    p.add_argument("--data", required=True, help=".mat file with the reflectance cube")
    p.add_argument("--gt", required=True, help=".mat file with the label raster")
    p.add_argument("--data-key", required=True, help="array name inside the data file")
    p.add_argument("--gt-key", required=True, help="array name inside the ground-truth file")
    p.add_argument("--out", required=True, help="output prefix for .hsic/.hsil")
    p.add_argument("--bands", default=None,
                   help="1-based band ranges to keep, e.g. 1-103,109-149,164-219")

    p = sub.add_parser("verify", help="re-parse emitted files and report per-class counts")
    p.add_argument("--out", required=True, help="prefix used at conversion time")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    from .convert import convert, verify

    try:
        if args.command == "convert":
            manifest = convert(args.data, args.gt, args.data_key, args.gt_key,
                               args.out, bands=args.bands)
            print(f"wrote {manifest.cube_path} ({manifest.height}x{manifest.width}x{manifest.bands})")
            print(f"wrote {manifest.label_path} ({manifest.num_classes} classes, "
                  f"{manifest.labeled_pixels} labeled pixels)")
            print(f"manifest: {args.out}.manifest.json")
        else:
            report, _ = verify(args.out)
            print(report)
        return 0
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
