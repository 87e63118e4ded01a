"""Command line: ask, batch, anonymize, score, serve."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .backends import ENV_BACKEND_URL
from .core import PipelineConfig, TelebridgeError, UserQuery, load_config
from .gateway import Resources, handle_query, run_batch
from .privacy.anonymize import PrivacyParams, anonymize
from .resources import data_path


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand without clobbering
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    p.add_argument("--backend-url", default=argparse.SUPPRESS, help=f"chat completions endpoint (else ${ENV_BACKEND_URL}, else scripted)")
    p.add_argument("--fixtures", action="append", default=argparse.SUPPRESS, help="scripted fixture JSON (repeatable)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="noise seed for the privacy stage")
    p.add_argument("--trace", action="store_true", default=argparse.SUPPRESS, help="include the stage trace in output")
    p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="telebridge", parents=[common], description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    ask = sub.add_parser("ask", parents=[common], help="run one query through the pipeline")
    ask.add_argument("--query", "-q", required=True)
    ask.add_argument("--vertical-hint")

    batch = sub.add_parser("batch", parents=[common], help="JSON Lines of queries in, JSON Lines of responses out")
    batch.add_argument("input", help="input .jsonl, or - for stdin")
    batch.add_argument("output", nargs="?", default="-", help="output .jsonl (default stdout)")

    anon = sub.add_parser("anonymize", parents=[common], help="privacy stage only")
    anon.add_argument("--query", "-q", help="text to anonymize (default: stdin)")
    anon.add_argument("--report", action="store_true", help="print the entity report as JSON")

    score = sub.add_parser("score", parents=[common], help="run the evaluation suite")
    score.add_argument("--scenarios", default=str(data_path("scenarios", "fixture200.jsonl")))
    score.add_argument("--out", help="report JSON path (default stdout)")
    score.add_argument("--table", help="per-scenario TSV path")

    serve = sub.add_parser("serve", parents=[common], help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    return parser


def config_from(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def resources_from(args, cfg: PipelineConfig) -> Resources:
    url = getattr(args, "backend_url", None) or os.environ.get(ENV_BACKEND_URL)
    if url:
        return Resources.http(url, cfg)
    return Resources.scripted(getattr(args, "fixtures", None), cfg)


def _open_out(path: str):
    return sys.stdout if path == "-" else open(path, "w", encoding="utf-8")


def cmd_ask(args, cfg: PipelineConfig) -> int:
    res = resources_from(args, cfg)
    resp = handle_query(UserQuery(args.query, args.vertical_hint), res, cfg)
    print(json.dumps(resp.to_dict(getattr(args, "trace", False)), sort_keys=True, indent=2))
    return 1 if resp.outcome == "error" else 0


def cmd_batch(args, cfg: PipelineConfig) -> int:
    res = resources_from(args, cfg)
    src = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    with src:
        lines = src.read().splitlines()
    out = run_batch(lines, res, cfg, include_trace=getattr(args, "trace", False))
    fh = _open_out(args.output)
    try:
        fh.write("".join(line + "\n" for line in out))
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_anonymize(args, cfg: PipelineConfig) -> int:
    text = args.query if args.query is not None else sys.stdin.read().strip()
    if not text:
        raise TelebridgeError("nothing to anonymize")
    res = Resources.load(cfg=cfg)
    assign = res.scorer.assign(UserQuery(text))
    out = anonymize(text, assign, PrivacyParams(cfg.epsilon, cfg.k_anon, cfg.seed), res.hierarchy, res.detector)
    print(out.text)
    if args.report:
        print(json.dumps([d.to_dict() for d in out.report], sort_keys=True, indent=2))
    return 0


def cmd_score(args, cfg: PipelineConfig) -> int:
    from .evalharness import load_scenarios, run_suite

    report = run_suite(load_scenarios(args.scenarios), resources_from(args, cfg), cfg)
    if args.out:
        report.write(args.out, args.table)
    else:
        print(report.to_json())
        if args.table:
            Path(args.table).write_text(report.to_tsv(), encoding="utf-8")
    return 0


def cmd_serve(args, cfg: PipelineConfig) -> int:
    from .server import serve

    serve(args.host, args.port, resources_from(args, cfg), cfg)
    return 0


COMMANDS = {"ask": cmd_ask, "batch": cmd_batch, "anonymize": cmd_anonymize, "score": cmd_score, "serve": cmd_serve}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)  # exits 2 with usage on bad input
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, config_from(args))
    except (TelebridgeError, OSError, json.JSONDecodeError) as exc:
        print(f"telebridge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
