import sys

from raec.cli import main

sys.exit(main())
