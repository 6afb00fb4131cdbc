import sys

from flowdesc.cli import main

sys.exit(main())
