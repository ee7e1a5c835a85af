import sys

from vioflight.cli import main

sys.exit(main())
