#!/usr/bin/env python3
"""Regenerate the shipped reference-campaign fault script.

The JSON under scenarios/ is committed so replays do not depend on the
generator; run this after touching the campaign table to refresh it.
"""

import argparse
import json
from pathlib import Path

from bagcell.scenarios import build_reference_script

DEFAULT_OUT = Path(__file__).resolve().parent.parent / "scenarios" / "reference_campaign.json"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = parser.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(build_reference_script().to_dict(), indent=2) + "\n"
    args.out.write_text(text)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
