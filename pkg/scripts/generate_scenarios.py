#!/usr/bin/env python3
"""Regenerate a scenario fixture from the shipped templates."""

from __future__ import annotations

import argparse

from telebridge.evalharness import generate_scenarios, intent_frequencies, save_scenarios
from telebridge.resources import data_path

FIXTURE_SEED = 2024


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--seed", type=int, default=FIXTURE_SEED)
    ap.add_argument("--out", default=str(data_path("scenarios", "fixture200.jsonl")))
    args = ap.parse_args()
    scenarios = generate_scenarios(args.count, args.seed)
    save_scenarios(scenarios, args.out)
    print(f"wrote {len(scenarios)} scenarios to {args.out}")
    for intent, freq in intent_frequencies(scenarios).items():
        print(f"  {intent:28s} {freq:.3f}")


if __name__ == "__main__":
    main()
