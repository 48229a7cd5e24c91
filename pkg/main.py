#!/usr/bin/env python3
"""Developer entry point for the homogenization toolkit (same commands as `homog`)."""

import sys

from src.cli import main

if __name__ == '__main__':
    sys.exit(main())
