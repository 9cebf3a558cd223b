import sys

from erlkit.cli.main import main

sys.exit(main())
