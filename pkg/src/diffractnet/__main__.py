import sys

from diffractnet.cli import main

sys.exit(main())
