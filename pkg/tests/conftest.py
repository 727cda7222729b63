import numpy as np
import pytest

from massfuse import CovariateMatrix, DesignSpec, NonProbSample, ProbSample


def make_pair(rng, n_a=40, n_b=15, p=2, pi=None, design=None):
    """Small random donor/recipient pair with named columns x1..xp."""
    names = tuple(f"x{j + 1}" for j in range(p))
    Xa = rng.normal(size=(n_a, p))
    ya = 1.0 + Xa @ np.arange(1, p + 1) + rng.normal(size=n_a)
    Xb = rng.normal(size=(n_b, p))
    pi = rng.uniform(0.05, 0.9, n_b) if pi is None else np.broadcast_to(pi, (n_b,)).astype(float)
    donors = NonProbSample(CovariateMatrix(Xa, names), ya)
    recipients = ProbSample(CovariateMatrix(Xb, names), pi, design or DesignSpec.poisson())
    return donors, recipients


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
