#!/usr/bin/env python3
"""
Prism: two-stage video encoder pretraining on synthetic video-text corpora

Entry point script for corpus generation, pretraining, adaptation, evaluation and reports.
"""

import sys

from src.cli import main

if __name__ == '__main__':
    sys.exit(main())
