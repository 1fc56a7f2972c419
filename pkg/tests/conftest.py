import sys

import numpy as np
import pytest

from promptfed.datasets import synth_task
from promptfed.model import Backbone


@pytest.fixture
def small_backbone():
    return Backbone.init(4, 6, 5, 3, 3, seed=11)


@pytest.fixture
def small_batch():
    return synth_task(3, 3, 5, 40).subset(np.arange(8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
