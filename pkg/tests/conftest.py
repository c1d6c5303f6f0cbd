"""Shared pytest configuration for the stablenet test suite."""

import os
import sys

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
sys.path.insert(0, os.path.dirname(__file__))

from networks import coupled_net, unit_box  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def coupled():
    return coupled_net(), unit_box(1)
