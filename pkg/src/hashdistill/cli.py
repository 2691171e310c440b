"""Command-line front-end: a thin HTTP client for the service endpoints.

By default every subcommand talks to an in-process instance of the
service, so no server needs to be running; ``--server URL`` points the
same commands at a remote instance instead. ``serve`` starts that
instance. Config comes from a JSON file (``--config``) and/or dotted
``--set section.field=value`` overrides.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx


def make_client(server=None):
    """An httpx-compatible client: remote if ``server`` is given, else in-process."""
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hashdistill",
        description="Train binary hash codes with two-view distillation and "
        "evaluate Hamming retrieval.",
    )
    parser.add_argument(
        "--server",
        default=None,
        help="base URL of a running service; by default commands run in-process",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def add_run_command(name, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", help="JSON experiment config file")
        sub.add_argument("--output-dir", help="output directory (overrides the config's)")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="PATH=VALUE",
            help="dotted config override, e.g. train.lambda1=0.3 (repeatable)",
        )
        return sub

    gen = add_run_command("gen-data", "materialize the dataset tables")
    gen.add_argument("--format", choices=("csv", "bin"), default="csv")
    train = add_run_command("train", "train (or resume) the model")
    train.add_argument("--stop-after", type=int, default=None,
                       help="run at most this many epochs now")
    add_run_command("encode", "encode database and query splits to code files")
    add_run_command("eval", "score the run's code files")
    add_run_command("ablate", "train and score every loss-term variant")
    add_run_command("sweep-st", "Hamming-shift sweep over transform intensity")
    add_run_command("deform-eval", "mAP under each held-out deformation")

    search = commands.add_parser("search", help="rank a run's database for new features")
    search.add_argument("--run-dir", required=True)
    search.add_argument("--features", required=True,
                        help="feature table file with the probe vectors")
    search.add_argument("-m", type=int, default=10, help="neighbors per probe")

    serve = commands.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _config_payload(args):
    payload = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    if args.output_dir:
        payload["output_dir"] = args.output_dir
    if not payload:
        raise SystemExit("provide --config and/or --output-dir")
    return payload


def _post(client, path, body):
    response = client.post(path, json=body)
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        print(f"error: {detail}", file=sys.stderr)
        return None
    return response.json()


_RUN_ENDPOINTS = {
    "gen-data": "/data/generate",
    "train": "/runs/train",
    "encode": "/runs/encode",
    "eval": "/runs/eval",
    "ablate": "/runs/ablate",
    "sweep-st": "/runs/sweep-st",
    "deform-eval": "/runs/deform-eval",
}


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    with make_client(args.server) as client:
        if args.command == "search":
            from .data import read_features

            features = read_features(args.features)
            body = {
                "run_dir": args.run_dir,
                "features": features.tolist(),
                "m": args.m,
            }
            result = _post(client, "/search", body)
        else:
            body = {
                "config": _config_payload(args),
                "overrides": list(args.overrides),
            }
            if args.command == "gen-data":
                body["file_format"] = args.format
            elif args.command == "train" and args.stop_after is not None:
                body["stop_after"] = args.stop_after
            result = _post(client, _RUN_ENDPOINTS[args.command], body)

    if result is None:
        return 1
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
