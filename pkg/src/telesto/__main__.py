import sys

from telesto.cli import main

sys.exit(main())
