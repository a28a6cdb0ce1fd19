"""Tiny utility: convert a keypress event log to per-timepoint labels.

    python3 -m rym.events_tool --events log.jsonl --rate 10 --timepoints 600

Prints the label codes as a JSON array. Lets external capture tools verify
their exports against the real ingestion and alignment path.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from rym.data import Recording, align_labels, read_events


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rym-events-to-labels", description=__doc__)
    parser.add_argument("--events", required=True, help="JSONL keypress log")
    parser.add_argument("--rate", type=float, required=True, help="sample rate in Hz")
    parser.add_argument("--timepoints", type=int, required=True, help="number of timepoints")
    args = parser.parse_args(argv)

    header, events = read_events(args.events)
    rec = Recording(
        subject_id=str(header.get("subject_id", "anon")),
        sample_rate_hz=args.rate,
        channels=("placeholder",),
        samples=np.zeros((1, args.timepoints)),
    )
    labeled = align_labels(rec, events)
    json.dump([int(v) for v in labeled.labels], sys.stdout)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
