"""Entry point for ``python -m stharm``."""

import sys

from .cli import main

sys.exit(main())
