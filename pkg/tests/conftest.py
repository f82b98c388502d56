"""Shared fixtures and reference oracles.

The oracle functions below are deliberately naive: plain loops over the
defining sums, no shared code with the package. Where a test compares a
library value against ``oracle_*``, the oracle is the ground truth.
"""

import math

import numpy as np
import pytest

from parpath import build_index_sets
from parpath.core import Grid, lift_sampled_paths


def midx_fact(i):
    out = 1
    for v in i:
        out *= math.factorial(int(v))
    return out


def oracle_level1(xhat, x, i, s, t):
    """X^(i)_{st} as the literal left-point sum, shape (d,).

    sum over cells r in [s, t) of prod_l (xhat_r - xhat_s)^{i_l} / i!
    times the driver increment of cell r.
    """
    d = x.shape[1]
    total = np.zeros(d)
    fact = midx_fact(i)
    for r in range(s, t):
        w = 1.0
        for axis, power in enumerate(i):
            w *= (xhat[r, axis] - xhat[s, axis]) ** power
        total += (w / fact) * (x[r + 1] - x[r])
    return total


def oracle_level2(xhat, x, jk, s, t, delta=None):
    """XX^(jk)_{st} as the literal double sum, shape (d, d).

    The inner level-1 sum is accumulated incrementally so the cost is
    linear in t - s. ``delta`` switches on the Brownian cell term
    ((dx (x) dx) - delta I) / 2 weighted by (xhat_r - xhat_s)^{j+k} /
    (j! k!), matching the corrected lift convention.
    """
    j, k = jk
    d = x.shape[1]
    fj, fk = midx_fact(j), midx_fact(k)
    inner = np.zeros(d)  # X^(j)_{s, r} accumulated as r advances
    total = np.zeros((d, d))
    for r in range(s, t):
        wk = 1.0
        wjk = 1.0
        for axis in range(len(j)):
            base = xhat[r, axis] - xhat[s, axis]
            wk *= base ** k[axis]
            wjk *= base ** (j[axis] + k[axis])
        dx = x[r + 1] - x[r]
        total += (wk / fk) * np.outer(inner, dx)
        if delta is not None:
            total += (wjk / (fj * fk)) * 0.5 * (np.outer(dx, dx)
                                                - delta * np.eye(d))
        wj = 1.0
        for axis, power in enumerate(j):
            wj *= (xhat[r, axis] - xhat[s, axis]) ** power
        inner = inner + (wj / fj) * dx
    return total


def random_walk_paths(seed, N, e=2, d=1, scale=None):
    """Driver samples from a plain numpy RNG (not the package streams)."""
    gen = np.random.default_rng(seed)
    if scale is None:
        scale = 1.0 / math.sqrt(N)
    xhat = np.concatenate([np.zeros((1, e)),
                           np.cumsum(scale * gen.standard_normal((N, e)), axis=0)])
    x = np.concatenate([np.zeros((1, d)),
                        np.cumsum(scale * gen.standard_normal((N, d)), axis=0)])
    return xhat, x


@pytest.fixture(scope="session")
def small_cfg():
    # n = 2, m = 0: 6 level-1 indices, a single level-2 pair.
    return build_index_sets(0.45, 0.2, 2)


@pytest.fixture(scope="session")
def default_cfg():
    # n = 7, m = 2: 36 level-1 indices, 15 pairs.
    return build_index_sets(0.4, 0.08, 2)


@pytest.fixture(scope="session")
def walk_prp(default_cfg):
    """Moderate random-walk lift shared by read-only tests."""
    N = 128
    grid = Grid(T=1.0, N=N)
    xhat, x = random_walk_paths(7, N)
    return lift_sampled_paths(xhat, x, default_cfg, grid, cell_correction=False)
