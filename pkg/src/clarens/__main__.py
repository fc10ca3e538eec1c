import sys

from clarens.cli import main

sys.exit(main())
