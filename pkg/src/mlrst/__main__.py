import sys

from mlrst.cli import main

sys.exit(main())
