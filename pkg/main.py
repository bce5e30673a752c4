#!/usr/bin/env python3
"""
Main entry point for windcast.
"""

import sys

from windcast.cli import main

if __name__ == '__main__':
    sys.exit(main())
