import sys

from gagsl.cli import main

sys.exit(main())
