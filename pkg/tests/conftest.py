import numpy as np
import pytest

from hmmsv import ModelConfig, ParameterSet


def random_parameters(k, h, rng, diag_bias=0.0, sigma_range=(0.4, 4.0)):
    """Strictly positive random parameter set; diag_bias > 0 favors staying put."""

    def table(rows):
        out = rng.dirichlet(np.ones(k), size=rows)
        if diag_bias and k > 1:
            for r in range(rows):
                out[r] = (1.0 - diag_bias) * out[r]
                out[r, r % k] += diag_bias
        return out

    early = tuple(table(k**i) for i in range(h))
    pi = table(k**h)
    sigma = np.sort(rng.uniform(*sigma_range, size=k))
    return ParameterSet(early=early, pi=pi, sigma=sigma)


def random_instance(seed, k=None, h=None, T=None, k_max=3, h_max=2, T_max=6):
    """Small random model plus data, convenient for oracle comparisons."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, k_max + 1)) if k is None else k
    h = int(rng.integers(0, h_max + 1)) if h is None else h
    T = int(rng.integers(1, T_max + 1)) if T is None else T
    config = ModelConfig(k=k, h=h)
    params = random_parameters(k, h, rng)
    y = rng.normal(0.0, 2.0, size=T)
    return config, params, y


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
