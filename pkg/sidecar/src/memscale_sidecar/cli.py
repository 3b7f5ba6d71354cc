"""Command line entry point."""

from __future__ import annotations

import argparse
import sys

from .app import serve
from .backends import REGISTRY, BackendInitError
from .config import BindError, ConfigError, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memscale-sidecar",
        description="serve one retrieval backend behind the adapter wire protocol",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--backend", choices=sorted(REGISTRY), help="backend to serve")
    parser.add_argument("--bind", help="host:port (default 127.0.0.1:9410)")
    parser.add_argument("--top-k", type=int, help="default units per retrieve")
    parser.add_argument("--counted", help="comma-separated counted methods")
    parser.add_argument("--log-level", default="info")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    counted = None
    if args.counted is not None:
        counted = tuple(p.strip() for p in args.counted.split(",") if p.strip())
    try:
        config = load_config(
            args.config,
            backend=args.backend,
            bind_address=args.bind,
            top_k=args.top_k,
            counted_methods=counted,
        )
        serve(config, log_level=args.log_level)
    except (ConfigError, BackendInitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
