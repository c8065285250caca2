"""
Copyright (c) 2024 Gabriel Guerrer

Distributed under the MIT license - See LICENSE for details
"""

"""
Runs the uplift-mt command line.
"""

import sys

from uplift_mt.cli import main


if __name__ == '__main__':
    sys.exit(main())
