import sys

from perinstance_dp.cli import main

sys.exit(main())
