#!/usr/bin/env python3
"""Run the evaluation suite on a scenario file and print the headline metrics."""

from __future__ import annotations

import argparse
from pathlib import Path

from telebridge.core import PipelineConfig, load_config
from telebridge.evalharness import load_scenarios, run_suite
from telebridge.gateway import Resources
from telebridge.resources import data_path

HEADLINE = (
    "pii_recall", "pii_precision", "pii_f1", "token_retention", "preservation",
    "overlap", "coverage", "similarity", "hallucination", "fre_mean", "fre_min", "fre_max",
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenarios", default=str(data_path("scenarios", "fixture200.jsonl")))
    ap.add_argument("--config")
    ap.add_argument("--fixtures", action="append")
    ap.add_argument("--out-dir", default="results")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else PipelineConfig()
    report = run_suite(load_scenarios(args.scenarios), Resources.scripted(args.fixtures, cfg), cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.json", out / "rows.tsv")
    print(f"scenarios={report.n_scenarios} answered={report.n_answered} clarified={report.n_clarified} errored={report.n_errored}")
    for k in HEADLINE:
        v = getattr(report, k)
        print(f"  {k:16s} {'-' if v is None else f'{v:.4f}'}")
    print(f"report: {out / 'report.json'}")


if __name__ == "__main__":
    main()
