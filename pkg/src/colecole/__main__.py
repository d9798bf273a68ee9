import sys

from colecole.cli import main

sys.exit(main())
