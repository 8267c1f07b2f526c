"""Command line entry point: run the pipeline end to end or stage by stage.

Every command writes its artifacts atomically under --out; a completed
stage with unchanged inputs is a no-op unless --force. Failures print a
machine-readable JSON object on stderr and exit nonzero (2 for missing
prerequisites).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .benchmark import MATCH_THRESHOLD
from .gateway import Gateway, HttpBackend, MockBackend, RetryPolicy
from .pipeline import (
    MissingPrerequisite,
    StageConfig,
    run_bench,
    run_cost,
    run_extract,
    run_merge,
    run_repair,
    run_validate,
    run_variables,
)

log = logging.getLogger(__name__)

STAGE_COMMANDS = ("extract", "repair", "variables", "validate", "merge")


def _add_common(parser: argparse.ArgumentParser, manifests: bool = True) -> None:
    if manifests:
        parser.add_argument(
            "--manifest",
            action="append",
            required=True,
            type=Path,
            help="volume manifest JSON; repeat for multiple volumes",
        )
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--force", action="store_true", help="re-run even if up to date")


def _add_gateway(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        choices=("live", "mock"),
        default="mock",
        help="model backend (default mock; live needs --base-url)",
    )
    parser.add_argument("--fixtures", type=Path, help="fixture JSON for the mock backend")
    parser.add_argument("--base-url", help="base URL of the live backend")
    parser.add_argument(
        "--api-key-env",
        default="MODEL_API_KEY",
        help="name of the environment variable holding the API key",
    )
    parser.add_argument("--model-extract", default="pro", help="model id for page extraction")
    parser.add_argument(
        "--model-cheap", default="lite", help="model id for repair and variable extraction"
    )
    parser.add_argument("--max-in-flight", type=int, default=8)
    parser.add_argument(
        "--max-retries", type=int, default=None, help="override per-entry retry cap"
    )
    parser.add_argument(
        "--max-page-retries", type=int, default=None, help="override per-page retry cap"
    )
    parser.add_argument("--strict-json", action="store_true", help="reject code-fenced output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patentpipe",
        description="Build a structured patent dataset from scanned register pages.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in (
        ("extract", "Stage I part 1: page extraction"),
        ("repair", "Stage I part 2: truncation repair"),
        ("variables", "Stage II: variable extraction"),
        ("run", "all stages through merge in one go"),
    ):
        cmd = sub.add_parser(name, help=doc)
        _add_common(cmd)
        _add_gateway(cmd)

    validate = sub.add_parser("validate", help="structural validation and flag emission")
    _add_common(validate)

    merge = sub.add_parser("merge", help="merge validated volumes into one dataset")
    _add_common(merge, manifests=False)

    bench = sub.add_parser("bench", help="benchmark a dataset against a reference")
    bench.add_argument("--candidate", type=Path, required=True, help="candidate merged CSV")
    bench.add_argument("--perfect", type=Path, required=True, help="reference merged CSV")
    bench.add_argument("--threshold", type=float, default=MATCH_THRESHOLD)
    bench.add_argument("--out", type=Path, required=True)

    cost = sub.add_parser("cost", help="cost report from the usage ledger")
    cost.add_argument("--prices", type=Path, required=True, help="price sheet JSON")
    cost.add_argument("--batch", action="store_true", help="apply the batch discount")
    cost.add_argument("--out", type=Path, required=True)

    serve = sub.add_parser("review-serve", help="serve the review queue over HTTP")
    serve.add_argument("--manifest", action="append", type=Path, default=[])
    serve.add_argument("--out", type=Path, required=True)
    serve.add_argument("--ui-dir", type=Path, help="built UI bundle to host at /")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    return parser


def _build_gateway(args: argparse.Namespace) -> Gateway:
    if args.backend == "mock":
        if not args.fixtures:
            raise ValueError("--fixtures is required with the mock backend")
        backend = MockBackend.from_file(args.fixtures)
    else:
        if not args.base_url:
            raise ValueError("--base-url is required with the live backend")
        backend = HttpBackend(args.base_url, api_key_env=args.api_key_env)
    return Gateway(backend, max_in_flight=args.max_in_flight)


def _build_config(args: argparse.Namespace) -> StageConfig:
    cfg = StageConfig(out_dir=args.out, force=args.force)
    if hasattr(args, "model_extract"):
        cfg.model_extract = args.model_extract
        cfg.model_cheap = args.model_cheap
        cfg.max_in_flight = args.max_in_flight
        cfg.strict_json = args.strict_json
        # The mock backend is deterministic, so backing off between
        # attempts would only slow failure reporting down.
        zero_delay = args.backend == "mock"
        entry_attempts = args.max_retries or 10
        page_attempts = args.max_page_retries or 25
        cfg.entry_policy = RetryPolicy(
            max_attempts=entry_attempts, base_delay=0.0 if zero_delay else 1.0, jitter=not zero_delay
        )
        cfg.page_policy = RetryPolicy(
            max_attempts=page_attempts, base_delay=0.0 if zero_delay else 1.0, jitter=not zero_delay
        )
    return cfg


def _run_stages(args: argparse.Namespace, stages: list[str]) -> None:
    cfg = _build_config(args)
    gateway = _build_gateway(args) if any(
        s in ("extract", "repair", "variables") for s in stages
    ) else None
    for stage in stages:
        if stage in ("extract", "repair", "variables"):
            runner = {"extract": run_extract, "repair": run_repair, "variables": run_variables}[
                stage
            ]
            for manifest in args.manifest:
                artifact = runner(manifest, gateway, cfg)
                log.info("%s: wrote %s", stage, artifact)
        elif stage == "validate":
            for manifest in args.manifest:
                artifact = run_validate(manifest, cfg)
                log.info("validate: wrote %s", artifact)
        elif stage == "merge":
            artifact = run_merge(cfg)
            log.info("merge: wrote %s", artifact)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("extract", "repair", "variables"):
            _run_stages(args, [args.command])
        elif args.command == "run":
            _run_stages(args, ["extract", "repair", "variables", "validate", "merge"])
        elif args.command == "validate":
            _run_stages(args, ["validate"])
        elif args.command == "merge":
            _run_stages(args, ["merge"])
        elif args.command == "bench":
            cfg = StageConfig(out_dir=args.out, threshold=args.threshold)
            report = run_bench(args.candidate, args.perfect, cfg)
            log.info("bench: wrote %s", report)
        elif args.command == "cost":
            cfg = StageConfig(out_dir=args.out)
            report = run_cost(args.prices, cfg, batch=args.batch)
            log.info("cost: wrote %s", report)
        elif args.command == "review-serve":
            import uvicorn

            from .review import create_app

            app = create_app(args.out, manifest_paths=args.manifest, ui_dir=args.ui_dir)
            uvicorn.run(app, host=args.host, port=args.port)
    except MissingPrerequisite as exc:
        _fail("missing_prerequisite", str(exc))
        return 2
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        _fail(type(exc).__name__.lower(), str(exc))
        return 1
    return 0


def _fail(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"code": code, "message": message}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
