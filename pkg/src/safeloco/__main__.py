import sys

from safeloco.cli import main

sys.exit(main())
