"""Regenerate the committed fixture packs and the e2e dataset.

Run after any change to prompt templates, simulators, benchmark
templates, or pipeline behavior, then commit the refreshed assets:

    python3 scripts/make_fixture_pack.py
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from simulrag.fixturegen import build_all


def main() -> None:
    report = build_all()
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
