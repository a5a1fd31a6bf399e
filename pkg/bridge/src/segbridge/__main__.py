"""Command line entry: serve a stub bridge, or check another endpoint.

Default mode serves on stdin/stdout, which is how an engine spawns it:

    videoseg run --providers InstanceSegmentation="python3 -m segbridge" ...

`--pipe READ WRITE` attaches to a FIFO pair instead (opened read side
first to pair with a peer that opens its write side first). `check`
runs the conformance suite against another endpoint and exits 0 only
if every check passed.
"""

from __future__ import annotations

import argparse
import sys

from .adapters import stub_registry
from .manifest import stub_manifest
from .server import serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segbridge", description="perception bridge with stub adapters"
    )
    parser.add_argument(
        "--capabilities",
        default="InstanceSegmentation",
        help="comma separated capability list to advertise",
    )
    parser.add_argument("--device", default="cpu")
    parser.add_argument(
        "--pipe",
        nargs=2,
        metavar=("READ", "WRITE"),
        help="serve over this FIFO pair instead of stdin/stdout",
    )
    parser.add_argument(
        "--check",
        metavar="ENDPOINT",
        help="run the conformance suite against ENDPOINT and exit",
    )
    parser.add_argument("--timeout", type=float, default=10.0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.check:
        from .conformance import conformance_suite

        report = conformance_suite(args.check, timeout=args.timeout)
        print(report.format())
        return 0 if report.all_passed else 3

    names = tuple(c.strip() for c in args.capabilities.split(",") if c.strip())
    try:
        manifest = stub_manifest(names, device=args.device)
        registry = stub_registry(manifest.capabilities)
    except ValueError as exc:
        print(f"segbridge: {exc}", file=sys.stderr)
        return 2

    if args.pipe:
        with open(args.pipe[0], "rb") as reader, open(args.pipe[1], "wb") as writer:
            serve(manifest, registry, reader, writer)
    else:
        serve(manifest, registry)
    return 0


if __name__ == "__main__":
    sys.exit(main())
