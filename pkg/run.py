#!/usr/bin/env python3
"""tokenstyle runner for a source checkout."""

import sys
from pathlib import Path

# Add src to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root / "src"))

from tokenstyle.cli import main

if __name__ == "__main__":
    sys.exit(main())
