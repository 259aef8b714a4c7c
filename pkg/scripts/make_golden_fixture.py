#!/usr/bin/env python3
"""Regenerate the committed golden summary CSV (tests/data/golden_summary.csv).

Run after an intentional change to metrics, solvers, or report formatting:

    python scripts/make_golden_fixture.py
"""

import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from golden import build_golden_csv  # noqa: E402

TARGET = Path(__file__).resolve().parent.parent / "tests" / "data" \
    / "golden_summary.csv"


def main():
    with tempfile.TemporaryDirectory() as td:
        csv_text = build_golden_csv(Path(td))
    previous = TARGET.read_text() if TARGET.is_file() else None
    TARGET.write_text(csv_text)
    if previous == csv_text:
        print(f"{TARGET} unchanged")
    else:
        print(f"{TARGET} updated:")
        print(csv_text)


if __name__ == "__main__":
    main()
