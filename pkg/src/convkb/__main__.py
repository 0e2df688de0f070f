import sys

from convkb.cli import main

sys.exit(main())
