import sys

from dpdynamics.cli import main

sys.exit(main())
