import sys

from difet.cli import main

sys.exit(main())
