"""Independent reference implementations used by the tests."""
import itertools
from functools import lru_cache

import numpy as np
import torch

from gaitrecon.cvae import LatentDistribution, cvae_loss, kl_terms, reconstruction_terms


@lru_cache(maxsize=None)
def _valid_paths(n: int, k: int) -> np.ndarray:
    """Every 1-based state path of length ``n`` allowed by the cyclic chain plus occlusion state.

    The rules are written out here rather than taken from the library:
    a key pose may repeat or advance by one (K wraps to 1), and anything
    may enter or leave the occlusion state K+1.
    """
    occ = k + 1
    paths = np.array(list(itertools.product(range(1, k + 2), repeat=n)), dtype=np.int64).reshape(-1, n)
    a, b = paths[:, :-1], paths[:, 1:]
    ok = (a == occ) | (b == occ) | (b == a) | (b == (a % k) + 1)
    return paths[ok.all(axis=1)]


def brute_force_path(values: np.ndarray, k: int) -> tuple[float, tuple[int, ...], int]:
    """Cheapest valid path by exhaustive enumeration.

    Returns ``(cost, path, n_optimal)``. Costs are summed left to right so
    floating-point results are comparable bit for bit; ``path`` is only a
    meaningful comparison target when ``n_optimal == 1``.
    """
    n = values.shape[0]
    paths = _valid_paths(n, k)
    cost = values[0, paths[:, 0] - 1].astype(np.float64)
    for i in range(1, n):
        cost = cost + values[i, paths[:, i] - 1]
    best = cost.min()
    winners = np.flatnonzero(cost == best)
    return float(best), tuple(int(s) for s in paths[winners[0]]), len(winners)


def random_distance_matrix(rng, n: int, k: int) -> np.ndarray:
    m = rng.random((n, k + 1)) * 3.0
    m[:, -1] = rng.random() * 2.0 + 0.2
    if rng.random() < 0.3:
        # coarse grid values create ties
        m = np.round(m * 2) / 2
    return m


def micro_model_check(kl_form: str, seed: int = 0) -> float:
    """Largest relative error between autograd and central differences on a 3-parameter model.

    theta = (a, b, c) drives the reconstruction ``sigmoid(a*u + b)``, the
    mean ``c*v`` and the log-scale ``0.3*a - 0.5*c*w``. Finite differences
    go through the numpy-facing loss, autograd through the tensor terms.
    """
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(4, 4))
    x = (rng.random((4, 4)) > 0.5).astype(float)
    v, w = rng.normal(size=3), rng.normal(size=3)
    lam1, lam2 = 1.0, 0.5

    def loss_np(theta):
        a, b, c = theta
        x_hat = 1.0 / (1.0 + np.exp(-(a * u + b)))
        dist = LatentDistribution(c * v, 0.3 * a - 0.5 * c * w)
        return cvae_loss(x, x_hat, dist, lam1, lam2, kl_form).l_total

    theta0 = np.array([0.7, -0.2, 0.4])
    t = torch.tensor(theta0, dtype=torch.float64, requires_grad=True)
    ut, vt, wt = (torch.from_numpy(arr) for arr in (u, v, w))
    x_hat = torch.sigmoid(t[0] * ut + t[1])
    mu, ls = t[2] * vt, 0.3 * t[0] - 0.5 * t[2] * wt
    total = lam1 * reconstruction_terms(torch.from_numpy(x)[None], x_hat[None])[0] \
        + lam2 * kl_terms(mu[None], ls[None], kl_form)[0]
    total.backward()
    analytic = t.grad.numpy()

    h = 1e-6
    numeric = np.array([(loss_np(theta0 + h * e) - loss_np(theta0 - h * e)) / (2 * h) for e in np.eye(3)])
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)))
