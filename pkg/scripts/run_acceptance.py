"""Run the acceptance suite and print one PASS/FAIL line per criterion."""

import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("-k", help="pytest -k expression to select criteria, e.g. 'criterion_1 or criterion_7'")
    args = parser.parse_args()
    cmd = [sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_acceptance.py"), "-q", "-s"]
    if args.k:
        cmd += ["-k", args.k]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    lines = sorted({l for l in proc.stdout.splitlines() if l.startswith("criterion ")},
                   key=lambda l: int(l.split()[1].rstrip(":")))
    print("\n".join(lines))
    if proc.returncode:
        print(proc.stdout[-3000:], file=sys.stderr)
    return proc.returncode


if __name__ == "__main__":
    sys.exit(main())
