import sys

from bikeflow.cli import main

sys.exit(main())
