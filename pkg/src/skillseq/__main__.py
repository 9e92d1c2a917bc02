import sys

from skillseq.cli import main

sys.exit(main())
