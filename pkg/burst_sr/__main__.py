import sys

from burst_sr.cli import main

sys.exit(main())
