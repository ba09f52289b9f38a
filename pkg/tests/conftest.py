from __future__ import annotations

import numpy as np
import pytest

from uclkc import hard_instance as hi


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_hard():
    """d = 2 hard instance with a known gap."""
    params = hi.HardInstanceParams(dim=2, delta_mdp=0.1, gap_override=0.02, sign_vector=(1,))
    return params, hi.build(params)
