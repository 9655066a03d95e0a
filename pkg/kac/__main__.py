import sys

from kac.cli import main

sys.exit(main())
