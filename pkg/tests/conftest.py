from __future__ import annotations

import numpy as np
import pytest

from specmap.model import ModelSpec

# admissible (numerator, denominator) of c_N so that N = M / c_N is an integer
RATIOS = {0.3: (3, 10), 0.7: (7, 10), 1.0: (1, 1)}


def random_specs(count: int = 20, seed: int = 20240611, ratios=(0.3, 0.7, 1.0), k_max: int = 5, m_max: int = 64):
    """Random instances with K <= k_max, M <= m_max and c_N drawn exactly from ``ratios``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        c = float(rng.choice(ratios))
        p, q = RATIOS[c]
        M = p * int(rng.integers(1, m_max // p + 1))
        N = M * q // p
        K = int(rng.integers(1, min(k_max, M - 1) + 1)) if M > 2 else 0
        if K == 0:
            continue
        vals = np.sort(rng.uniform(0.05, 10.0, K))[::-1]
        sigma = float(rng.uniform(0.3, 2.0))
        out.append(ModelSpec(M=M, N=N, sigma=sigma, spikes=[(float(v), 1) for v in vals]))
    return out


@pytest.fixture(scope="session")
def randomized_specs():
    return random_specs()


@pytest.fixture
def mp_unit():
    return ModelSpec(M=100, N=100, sigma=1.0, spikes=())


@pytest.fixture
def one_spike():
    return ModelSpec(M=50, N=100, sigma=1.0, spikes=[(4.0, 1)])
