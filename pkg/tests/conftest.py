import numpy as np
import pytest

from compfit.compressor import ParamBounds, ThetaRaw
from compfit.io_wav import AudioBuffer


def bursty_signal(rng, n, quiet=0.02, boosts=(10.0, 40.0), n_seg=None):
    """Noise with loud bursts so the threshold is crossed both ways."""
    x = rng.standard_normal(n) * quiet
    n_seg = n_seg or max(2, n // 250)
    for _ in range(n_seg):
        lo = int(rng.integers(0, max(1, n - 50)))
        hi = min(n, lo + int(rng.integers(40, 200)))
        x[lo:hi] *= rng.uniform(*boosts)
    return np.clip(x, -1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bounds():
    return ParamBounds()


@pytest.fixture
def burst_buffer(rng):
    return AudioBuffer(bursty_signal(rng, 1000), 44100)


@pytest.fixture
def theta_a():
    return ThetaRaw(-25.0, 1.5, 0.3, -0.2, 0.4)


@pytest.fixture
def theta_b():
    return ThetaRaw(-28.0, 0.5, 0.8, 0.1, -0.3)
