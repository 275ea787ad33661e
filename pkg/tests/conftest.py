import functools
import os

import pytest
from hypothesis import HealthCheck, settings

from rdspls.mesh import build_hierarchy

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

EXTENDED = os.environ.get("RDSPLS_EXTENDED") == "1"


@functools.lru_cache(maxsize=None)
def uniform_hierarchy(J):
    return build_hierarchy(J)


@functools.lru_cache(maxsize=None)
def shishkin_hierarchy(J, eps, c_star=2.0):
    return build_hierarchy(J, "shishkin", eps, c_star)


def pytest_collection_modifyitems(config, items):
    if EXTENDED:
        return
    skip = pytest.mark.skip(reason="extended run; set RDSPLS_EXTENDED=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
