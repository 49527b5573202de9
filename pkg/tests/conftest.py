from __future__ import annotations

import numpy as np
import pytest

from paneitz.curvature import affine_field, parse_curvature


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def height_K():
    """K = 1 + 0.1 x6 on S^5: a maximum at the north pole, a minimum at the south pole."""
    return affine_field(5, 1.0, [0, 0, 0, 0, 0, 0.1])


@pytest.fixture
def saddle_K():
    """K = 1 - 0.05 (x6 + x5^2) on S^5: one maximum, one index-1 saddle, two minima."""
    return parse_curvature("1-0.05*(x6+x5**2)", 5)


@pytest.fixture
def synthetic_K():
    """Diagonal quadratic on S^6 whose index-4 pair +-e5 has -Delta K = -0.2."""
    return parse_curvature("quadratic:1;0,0.05,0.1,0.15,0.21666666666666667,0.5,0.6", 6)


@pytest.fixture(autouse=True)
def _no_env_overrides(monkeypatch):
    import os

    for var in list(os.environ):
        if var.startswith("PANEITZ_"):
            monkeypatch.delenv(var, raising=False)
