"""Run the acceptance suite and print one PASS/FAIL line per criterion.

    python3 scripts/run_acceptance.py            # all ten criteria
    python3 scripts/run_acceptance.py --fast     # skip the training-heavy ones (5 to 8)
"""
import argparse
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--fast", action="store_true", help="deselect slow criteria")
    args = ap.parse_args()
    argv = [str(ROOT / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"]
    if args.fast:
        argv += ["-m", "not slow"]
    return pytest.main(argv)


if __name__ == "__main__":
    sys.exit(main())
