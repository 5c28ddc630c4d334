#!/usr/bin/env python3
"""Regenerate the golden fixture tree under fixtures/ (repo root)."""

import sys
from pathlib import Path

from aaqsim import fixtures


def main() -> int:
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "fixtures"
    names = fixtures.generate(root)
    print(f"wrote {len(names)} fixtures to {root}:")
    for name in names:
        print(f"  {name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
