import sys

from seqnet.scripts.cli import main

sys.exit(main())
