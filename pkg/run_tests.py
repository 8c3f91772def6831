#!/usr/bin/env python
"""
Test runner script for crossdiff

    ./run_tests.py            fast suite
    ./run_tests.py --all      include the slow statistical and convergence tests
    ./run_tests.py --coverage measure coverage of the crossdiff package
"""

import sys

import pytest


def main(argv):
    args = ["crossdiff"]
    if "--all" not in argv:
        args += ["-m", "not slow"]
    if "--coverage" in argv:
        import coverage

        cov = coverage.Coverage(source=["crossdiff", "crossdiff_project"])
        cov.start()
        status = pytest.main(args)
        cov.stop()
        cov.save()
        cov.report(show_missing=True)
    else:
        status = pytest.main(args)
    return 1 if status else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
