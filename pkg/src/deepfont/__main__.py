import sys

from deepfont.cli import main

sys.exit(main())
