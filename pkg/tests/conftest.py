import logging
import sys

import pytest


def pytest_configure(config):
    # stream trainer progress during long acceptance runs (visible with -s)
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s",
                        stream=sys.stderr)
