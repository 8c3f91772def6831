#!/usr/bin/env python
"""Command-line utility for crossdiff: check, verify, simulate and sweep."""
import sys


def main():
    """Run the crossdiff command line."""
    from crossdiff.cli import main as crossdiff_main

    crossdiff_main(sys.argv[1:])


if __name__ == '__main__':
    main()
