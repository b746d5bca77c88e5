"""Process entry point: ``refagent --seed 5 --max-rounds 10``.

The orchestrator launches one process per agent and speaks the
JSON-lines protocol over this process's stdio.
"""

from __future__ import annotations

import argparse
import sys

from .session import serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refagent",
        description="Reference exploration-agent client (JSON lines on stdio).",
    )
    parser.add_argument("--seed", type=int, default=0, help="proposal generator seed")
    parser.add_argument(
        "--max-rounds",
        type=int,
        default=25,
        help="transform batches to propose before replying done",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.max_rounds < 0:
        print("error: --max-rounds must be non-negative", file=sys.stderr)
        return 2
    return serve(sys.stdin, sys.stdout, seed=args.seed, max_rounds=args.max_rounds)


if __name__ == "__main__":
    sys.exit(main())
