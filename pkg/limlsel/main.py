"""
Main entry point for limlsel.

Runs the command-line interface:
    python -m limlsel.main study --scenario s1 --n 300 --reps 200
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
