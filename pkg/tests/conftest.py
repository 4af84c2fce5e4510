import numpy as np
import pytest

from anqopt.graph import generate_erdos_renyi, laplacian, metropolis_weights
from anqopt.problems import gen_linreg


class IdentityQuantizer:
    """Lossless test double: the engine copies c into c_hat and charges no bits."""

    lossless = True

    def __call__(self, x, eta, rngs=None):
        raise AssertionError("a lossless quantizer is never invoked")


@pytest.fixture(scope="session")
def net5():
    t = generate_erdos_renyi(5, 0.8, seed=2)
    return t, metropolis_weights(t), laplacian(t)


def desk_ls(alpha=0.0, kappa=10.0, seed=1):
    return gen_linreg(m=5, n_per_agent=6, d=4, seed=seed, alpha=alpha, kappa_target=kappa)[1]


def mse(X, xs):
    return float(np.sum((X - xs) ** 2) / (X.shape[0] * np.sum(xs**2)))
