#!/usr/bin/env python3
"""Run the deterministic CI gate (kernel identities, closed forms, profile)."""
import sys

from sbmlab.cli import main

if __name__ == "__main__":
    sys.exit(main(["verify", *sys.argv[1:]]))
