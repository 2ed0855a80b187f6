import numpy as np
import pytest

from nslab import spectral as sp


def taylor_green(n=16):
    x = sp.create_grid(n).coords
    return np.stack([np.sin(x[0]) * np.cos(x[1]), -np.cos(x[0]) * np.sin(x[1]), np.zeros_like(x[0])])


def random_vector(n=16, seed=0, kmax=None):
    return sp.band_limited_random(sp.create_grid(n), np.random.default_rng(seed), True, kmax)


def random_scalar(n=16, seed=0, kmax=None):
    return sp.band_limited_random(sp.create_grid(n), np.random.default_rng(seed), False, kmax)


@pytest.fixture
def tg16():
    from nslab.dynamics import taylor_green as exact_tg

    return exact_tg(sp.create_grid(16))
