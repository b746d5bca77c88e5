"""Run the agent with ``python3 -m refagent``."""

import sys

from .cli import main

sys.exit(main())
