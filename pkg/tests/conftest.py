import numpy as np
import pytest

import moedt.autodiff as ad


@pytest.fixture(autouse=True)
def _debug_checks():
    # run the whole suite with finite-value assertions on
    prev = ad.DEBUG_CHECKS
    ad.DEBUG_CHECKS = True
    yield
    ad.DEBUG_CHECKS = prev


@pytest.fixture
def rng():
    return np.random.default_rng(0)
