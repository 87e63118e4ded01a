#!/usr/bin/env python3
"""Run the worked healthcare example end to end and print each stage."""

from __future__ import annotations

import argparse
import json

from telebridge.core import UserQuery
from telebridge.gateway import Resources, handle_query

GOLDEN_QUERY = (
    "Dr. Ramirez reports real-time heart rate data from patient John Smith's wearable "
    "(ID: WM-47B-22, IP: 10.24.1.15) stopped updating in the ICU."
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--query", default=GOLDEN_QUERY)
    ap.add_argument("--json", action="store_true", help="print the full response with trace")
    args = ap.parse_args()
    res = Resources.scripted()
    resp = handle_query(UserQuery(args.query, request_id="golden"), res, clock=lambda: 0.0)
    if args.json:
        print(json.dumps(resp.to_dict(include_trace=True), sort_keys=True, indent=2))
        return
    art = resp.artifacts
    if "assign" in art:
        a = art["assign"]
        print(f"1 domain     {a.top_vertical} (confidence {a.confidence:.2f})")
    cls = art.get("classification")
    if cls is not None:
        c = cls.classification
        print(f"2 classify   {cls.routing.value}: {c.intent if c else '-'}")
    if "anonymization" in art:
        print(f"3 privacy    {art['anonymization'].text}")
    if "technical_query" in art:
        print(f"4 translate  {art['technical_query'].text}")
    if "expert_response" in art:
        print(f"5 expert     {art['expert_response']}")
    if "simplified" in art:
        s = art["simplified"]
        print(f"6 simplify   (FRE {s.fre:.1f}) {s.text}")
    print(f"outcome: {resp.outcome}")


if __name__ == "__main__":
    main()
