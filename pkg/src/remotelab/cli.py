"""Command line entry points: run the gateway or load the demo dataset."""

from __future__ import annotations

import argparse
import logging
import sys

from .platform import LabPlatform, PlatformConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="remotelab", description="remote laboratory platform")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP/WebSocket gateway")
    serve.add_argument("--config", default=None, help="JSON config file")
    serve.add_argument("--port", type=int, default=None, help="listen port (overrides config)")
    serve.add_argument("--data-dir", default=None, help="event log directory (overrides config)")

    seed = sub.add_parser("seed", help="load a demo dataset into the data directory")
    seed.add_argument("--config", default=None, help="JSON config file")
    seed.add_argument("--data-dir", default=None, help="event log directory (overrides config)")

    return parser


def _platform_from_args(args) -> LabPlatform:
    config = PlatformConfig.load(args.config)
    if args.data_dir:
        config.data_dir = args.data_dir
    return LabPlatform(config.data_dir, config=config)


def cmd_serve(args) -> int:
    import uvicorn

    from .gateway import create_app

    if args.port is not None:
        port = args.port
    else:
        port = PlatformConfig.load(args.config).port
    platform = _platform_from_args(args)
    platform.recover_orphans()
    platform.start_background()
    app = create_app(platform)
    try:
        uvicorn.run(app, host=platform.config.bind_host, port=port, log_level="warning")
    finally:
        platform.close()
    return 0


def cmd_seed(args) -> int:
    platform = _platform_from_args(args)
    try:
        summary = platform.seed_demo()
    finally:
        platform.close()
    print(
        "seeded: {} students, {} groups, {} setups, {} slots".format(
            len(summary["students"]), len(summary["groups"]), len(summary["setups"]), summary["slots"]
        )
    )
    print("sign in with admin/admin, teacher/teacher, or student01/student01 .. student42")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return cmd_serve(args)
    if args.command == "seed":
        return cmd_seed(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
