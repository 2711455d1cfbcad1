"""Run the experiment CLI with ``python -m wave_positivity``."""

import sys

from .cli import main

sys.exit(main())
