import sys

from pglqr.lab.cli import main

sys.exit(main())
