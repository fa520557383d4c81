import argparse
import sys

from .convert import ConversionError, convert


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="molex-bridge",
        description="convert a CLIP visual-tower checkpoint into a molex tensor archive")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--preset", required=True, choices=("b32", "b16", "l14"))
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        summary = convert(args.checkpoint, args.preset, args.out)
    except ConversionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {summary['entries']} tensors ({summary['parameters']:,} parameters) "
          f"to {summary['archive']}")
    print(f"manifest: {summary['manifest']} ({len(summary['unmapped'])} unmapped keys listed)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
