import sys

from firm.harness.cli import main

sys.exit(main())
