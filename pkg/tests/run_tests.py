#!/usr/bin/env python3
"""Run the FaceDub test suite with the common marker selections."""

import argparse
import subprocess
import sys


def build_command(args: argparse.Namespace) -> list[str]:
    cmd = [sys.executable, "-m", "pytest"]
    if args.coverage:
        cmd.extend(["--cov=facedub", "--cov-report=term-missing"])
    markers = []
    if args.fast:
        markers.append("not slow")
    if args.unit:
        markers.append("not integration")
    if markers:
        cmd.extend(["-m", " and ".join(markers)])
    cmd.append(f"tests/test_{args.file}.py" if args.file else "tests")
    return cmd


def main() -> int:
    parser = argparse.ArgumentParser(description="Run FaceDub tests")
    parser.add_argument("--fast", action="store_true", help="Skip slow training runs")
    parser.add_argument("--unit", action="store_true", help="Skip tests that render the synthetic dataset")
    parser.add_argument("--coverage", action="store_true", help="Report coverage of the facedub package")
    parser.add_argument("--file", type=str, help="Module name, e.g. 'warping' for tests/test_warping.py")
    cmd = build_command(parser.parse_args())
    print(" ".join(cmd))
    return subprocess.run(cmd).returncode


if __name__ == "__main__":
    sys.exit(main())
