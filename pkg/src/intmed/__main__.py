"""Allow ``python -m intmed``."""

import sys

from .cli import main

sys.exit(main())
