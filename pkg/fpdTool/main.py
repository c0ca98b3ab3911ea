"""
Program entry
Dispatches to the command-line verbs (certify, fpd, validate, sweep)
"""

import sys

from fpdTool.cli.main_cli import main


if __name__ == "__main__":
    sys.exit(main())
