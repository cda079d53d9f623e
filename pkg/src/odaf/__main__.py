import sys

from odaf.cli import main

sys.exit(main())
