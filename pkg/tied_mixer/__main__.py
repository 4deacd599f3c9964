import sys

from tied_mixer.cli import main

sys.exit(main())
