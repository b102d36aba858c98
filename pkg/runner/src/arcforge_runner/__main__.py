"""Command-line entry point: ``python -m arcforge_runner``."""

from __future__ import annotations

import argparse
import pathlib
import sys

from arcforge_runner import serve


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        prog="arcforge-runner",
        description="sandboxed candidate-program runner speaking JSON lines on stdio",
    )
    parser.add_argument(
        "--common-lib",
        metavar="FILE",
        help="helper source executed in the candidate namespace before the candidate",
    )
    parser.add_argument(
        "--mem-limit-mb",
        type=int,
        metavar="N",
        help="cap the process address space at N MiB (POSIX only)",
    )
    parser.add_argument(
        "--recursion-limit",
        type=int,
        metavar="N",
        help="set the interpreter recursion limit before loading any candidate",
    )
    return parser.parse_args(argv)


def apply_mem_limit(limit_mb: int) -> None:
    try:
        import resource
    except ImportError:
        print("arcforge-runner: --mem-limit-mb ignored (no resource module)", file=sys.stderr)
        return
    limit = limit_mb << 20
    try:
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
    except (ValueError, OSError) as exc:
        print(f"arcforge-runner: could not set memory limit: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    args = parse_args(argv)
    if args.mem_limit_mb:
        apply_mem_limit(args.mem_limit_mb)
    if args.recursion_limit:
        sys.setrecursionlimit(args.recursion_limit)
    common_lib = ""
    if args.common_lib:
        try:
            common_lib = pathlib.Path(args.common_lib).read_text(encoding="utf-8")
        except OSError as exc:
            print(f"arcforge-runner: cannot read --common-lib: {exc}", file=sys.stderr)
            return 2
    return serve(common_lib)


if __name__ == "__main__":
    sys.exit(main())
