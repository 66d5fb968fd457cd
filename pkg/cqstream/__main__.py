import sys

from cqstream.cli import main

sys.exit(main())
