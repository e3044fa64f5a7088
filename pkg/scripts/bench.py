#!/usr/bin/env python3
"""Micro-benchmarks over both enforcement backends; thin wrapper over the
CLI's bench subcommand so results are reproducible from one entry point.

    python scripts/bench.py [--seconds 2.0]
"""

import sys

from mswasm.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench"] + sys.argv[1:]))
