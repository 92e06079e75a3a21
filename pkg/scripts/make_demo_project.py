#!/usr/bin/env python3
"""Generate a synthetic issue-export CSV for offline pipeline demos.

The output has the columns the ingest command expects (issuekey, created,
title, description, storypoint) and is deterministic for a given seed.
"""

import argparse
import csv
import random
import sys
from datetime import datetime, timedelta, timezone

TOPICS = [
    "login page", "payment gateway", "search index", "report export", "cache layer",
    "user profile", "audit log", "email queue", "session store", "admin console",
]
ACTIONS = [
    "crashes on save", "times out under load", "renders incorrectly", "loses state",
    "needs pagination", "should validate input", "duplicates entries", "leaks memory",
]
DETAILS = [
    "Seen after the last deploy.", "Reproducible with an empty payload.",
    "Only affects large accounts.", "Regression from the schema change.",
]
CARDS = [0.5, 1, 2, 3, 5, 8, 13]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--project", default="DEMO")
    ap.add_argument("--n", type=int, default=120)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="-", help="output CSV path (default stdout)")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    base = datetime(2021, 3, 1, 9, 0, tzinfo=timezone.utc)
    rows = []
    for i in range(args.n):
        topic, action = rng.choice(TOPICS), rng.choice(ACTIONS)
        rows.append(
            {
                "issuekey": f"{args.project}-{i + 1}",
                "created": (base + timedelta(hours=3 * i)).isoformat(),
                "title": f"{topic.capitalize()} {action}",
                "description": f"The {topic} {action}. {rng.choice(DETAILS)}",
                "storypoint": f"{rng.choice(CARDS):g}",
            }
        )

    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8", newline="")
    writer = csv.DictWriter(out, fieldnames=["issuekey", "created", "title", "description", "storypoint"])
    writer.writeheader()
    writer.writerows(rows)
    if out is not sys.stdout:
        out.close()
        print(f"wrote {len(rows)} rows -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
