import numpy as np

from cggm_mix.em import sufficient_stats
from cggm_mix.model import ClassParams, Dataset


def random_spd(rng, p, jitter=0.5):
    A = rng.normal(size=(p, p))
    return A @ A.T / p + jitter * np.eye(p)


def random_class(rng, p, q, theta_scale=1.0):
    return ClassParams(random_spd(rng, p), theta_scale * rng.normal(size=(q, p)))


def random_stats(rng, n, p, q, K):
    """Moments of Gaussian data under random soft responsibilities."""
    data = Dataset(rng.normal(size=(n, p)) + rng.normal(size=(n, q)) @ rng.normal(size=(q, p)),
                   rng.normal(size=(n, q)))
    resp = rng.dirichlet(np.ones(K), size=n)
    return data, sufficient_stats(data, resp)
