import sys

from testsum.cli import main

sys.exit(main())
