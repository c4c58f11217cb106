import sys

from weakmeas.cli import main

sys.exit(main())
